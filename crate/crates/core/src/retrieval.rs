//! Two-scale retrieval: rank the gallery by cosine similarity of global
//! embeddings, then re-score the top `K` candidates with structural
//! similarity on pooled `G x G` grids.
//!
//! The re-scored head block always stays above the tail. Inside the head,
//! entries are ordered by their combined score; the tail keeps its cosine
//! order. Ties everywhere break by ascending id.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bank::{Gallery, GalleryItem};
use crate::error::{invalid, Error, Result};
use crate::fmap::{gap, pool_grid, FeatureMap};
use crate::matching::{by_score_then_id, cosine, structural_similarity, MarginalMode};
use crate::ot::SinkhornConfig;

/// How the head block's final score is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Combine {
    /// `cosine + structural`.
    #[default]
    Sum,
    StructuralOnly,
    /// No structural stage at all; identical to [`coarse_rank`].
    CosineOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievalConfig {
    /// Number of coarse candidates promoted to structural re-ranking.
    pub top_k: usize,
    /// Side of the pooled grid used for structural matching.
    pub grid: usize,
    pub sinkhorn: SinkhornConfig,
    pub combine: Combine,
    pub marginals: MarginalMode,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            top_k: 100,
            grid: 4,
            sinkhorn: SinkhornConfig::default(),
            combine: Combine::Sum,
            marginals: MarginalMode::CrossCorrelation,
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid == 0 {
            return Err(invalid("grid must be at least 1"));
        }
        self.sinkhorn.validate()
    }

    /// Truncation actually applied to a candidate pool of `pool` items.
    pub fn stage2_count(&self, pool: usize) -> usize {
        match self.combine {
            Combine::CosineOnly => 0,
            _ => self.top_k.min(pool),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    #[serde(rename = "id")]
    pub gallery_id: String,
    pub cosine: f64,
    pub structural: Option<f64>,
    #[serde(rename = "final")]
    pub final_score: f64,
}

/// One query's ordering of its candidate pool.
///
/// The first `stage2_count` entries are the re-scored head and are the only
/// ones carrying a structural score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    #[serde(rename = "query")]
    pub query_id: String,
    #[serde(rename = "k")]
    pub stage2_count: usize,
    pub entries: Vec<RankedEntry>,
}

/// Global embeddings, and pooled maps when a structural stage runs.
struct Prepared {
    global: Vec<Vec<f64>>,
    pooled: Vec<FeatureMap>,
}

impl Prepared {
    fn new(items: &[GalleryItem], grid: Option<usize>) -> Result<Self> {
        let global = items.par_iter().map(|it| gap(&it.fmap).into_vec()).collect();
        let pooled = match grid {
            Some(g) => items
                .par_iter()
                .map(|it| pool_grid(&it.fmap, g))
                .collect::<Result<Vec<_>>>()?,
            None => Vec::new(),
        };
        Ok(Self { global, pooled })
    }
}

fn check_query(query: &FeatureMap, gallery: &Gallery) -> Result<()> {
    let dim = gallery.shape().2;
    if query.dim() != dim {
        return Err(Error::ShapeMismatch(format!(
            "query width {} does not match gallery width {dim}",
            query.dim()
        )));
    }
    Ok(())
}

/// Cosine similarity of global embeddings against every gallery item,
/// highest first, ties by id.
pub fn coarse_rank(query: &FeatureMap, gallery: &Gallery) -> Result<Vec<(String, f64)>> {
    if gallery.is_empty() {
        return Err(invalid("gallery is empty"));
    }
    check_query(query, gallery)?;
    let q = gap(query);
    let mut ranked: Vec<(String, f64)> = gallery
        .items()
        .iter()
        .map(|it| (it.id.clone(), cosine(q.as_slice(), gap(&it.fmap).as_slice())))
        .collect();
    ranked.sort_by(|a, b| by_score_then_id((&a.0, a.1), (&b.0, b.1)));
    Ok(ranked)
}

/// Ranks the whole gallery for one query.
pub fn rerank(query_id: &str, query: &FeatureMap, gallery: &Gallery, config: &RetrievalConfig) -> Result<RankedList> {
    config.validate()?;
    check_query(query, gallery)?;
    let grid = structural_grid(config, gallery.len());
    let prepared = Prepared::new(gallery.items(), grid)?;
    let candidates: Vec<usize> = (0..gallery.len()).collect();
    rank_query(query_id, query, gallery.items(), &prepared, &candidates, config)
}

/// Ranks `gallery` for every query. Passing the same gallery object for both
/// arguments selects leave-one-out evaluation: each query is removed from its
/// own candidate pool.
pub fn batch_rerank(queries: &Gallery, gallery: &Gallery, config: &RetrievalConfig) -> Result<Vec<RankedList>> {
    config.validate()?;
    let exclude_self = std::ptr::eq(queries, gallery);
    let (_, _, qdim) = queries.shape();
    if qdim != gallery.shape().2 {
        return Err(Error::ShapeMismatch(format!(
            "query width {qdim} does not match gallery width {}",
            gallery.shape().2
        )));
    }
    let pool = gallery.len() - usize::from(exclude_self);
    let prepared = Prepared::new(gallery.items(), structural_grid(config, pool))?;
    queries
        .items()
        .par_iter()
        .enumerate()
        .map(|(q, item)| {
            let candidates: Vec<usize> = (0..gallery.len()).filter(|&c| !(exclude_self && c == q)).collect();
            rank_query(&item.id, &item.fmap, gallery.items(), &prepared, &candidates, config)
        })
        .collect()
}

fn structural_grid(config: &RetrievalConfig, pool: usize) -> Option<usize> {
    (config.stage2_count(pool) > 0).then_some(config.grid)
}

fn rank_query(
    query_id: &str,
    query: &FeatureMap,
    items: &[GalleryItem],
    prepared: &Prepared,
    candidates: &[usize],
    config: &RetrievalConfig,
) -> Result<RankedList> {
    let q_global = gap(query);
    let mut coarse: Vec<(usize, f64)> = candidates
        .iter()
        .map(|&c| (c, cosine(q_global.as_slice(), &prepared.global[c])))
        .collect();
    coarse.sort_by(|a, b| by_score_then_id((&items[a.0].id, a.1), (&items[b.0].id, b.1)));

    let k = config.stage2_count(coarse.len());
    let (head, tail) = coarse.split_at(k);

    let mut head_entries: Vec<RankedEntry> = if k > 0 {
        let q_pooled = pool_grid(query, config.grid)?;
        head.par_iter()
            .map(|&(c, cos)| {
                let target = &prepared.pooled[c];
                let marginals = config.marginals.marginals(&q_pooled, target)?;
                let structural = structural_similarity(&q_pooled, target, &marginals, &config.sinkhorn)?.score;
                let final_score = match config.combine {
                    Combine::StructuralOnly => structural,
                    _ => cos + structural,
                };
                Ok(RankedEntry {
                    gallery_id: items[c].id.clone(),
                    cosine: cos,
                    structural: Some(structural),
                    final_score,
                })
            })
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    head_entries.sort_by(|a, b| by_score_then_id((&a.gallery_id, a.final_score), (&b.gallery_id, b.final_score)));

    let entries = head_entries
        .into_iter()
        .chain(tail.iter().map(|&(c, cos)| RankedEntry {
            gallery_id: items[c].id.clone(),
            cosine: cos,
            structural: None,
            final_score: cos,
        }))
        .collect();

    Ok(RankedList {
        query_id: query_id.to_string(),
        stage2_count: k,
        entries,
    })
}
