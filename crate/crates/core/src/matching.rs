//! Structural similarity between two feature maps.
//!
//! Cells of the source map are matched to cells of the target map by an
//! entropic transport plan `T`. The structural similarity is
//! `sum_ij S_ij * T_ij`, where `S_ij` is the cosine similarity of source
//! cell `i` and target cell `j`; the structural distance is the same sum with
//! a distance in place of `S` (and the plan solved on that distance).
//! Because `T` is a coupling of two probability vectors, every term of the
//! sum is a readable contribution of one location pair.

use std::cmp::Ordering;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fmap::{gap, FeatureMap};
use crate::ot::{sinkhorn, CostMatrix, MarginalPair, SinkhornConfig, TransportPlan};

/// Cosine similarity, defined as 0 when either vector is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0)
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// A linear map applied independently to every cell, stored as an
/// `out x in` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    weights: Array2<f64>,
}

impl Projection {
    pub fn new(weights: Array2<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(invalid("projection must be nonempty"));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(invalid("projection has non-finite weights"));
        }
        Ok(Self { weights })
    }

    pub fn input_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.nrows()
    }
}

/// Maps every cell through `projection`; without one the map is returned as is.
pub fn part_embed(fmap: &FeatureMap, projection: Option<&Projection>) -> Result<FeatureMap> {
    let Some(p) = projection else {
        return Ok(fmap.clone());
    };
    if p.input_dim() != fmap.dim() {
        return Err(Error::ShapeMismatch(format!(
            "projection expects width {}, feature map has {}",
            p.input_dim(),
            fmap.dim()
        )));
    }
    let mut out = Vec::with_capacity(fmap.n_cells() * p.output_dim());
    for cell in fmap.cells() {
        for row in p.weights.rows() {
            out.push(row.iter().zip(cell).map(|(w, x)| w * x).sum());
        }
    }
    FeatureMap::new(fmap.grid_h(), fmap.grid_w(), p.output_dim(), out)
}

/// Cell-by-cell similarities; rows index source cells, columns target cells.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub sims: Array2<f64>,
}

fn check_same_dim(a: &FeatureMap, b: &FeatureMap) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::ShapeMismatch(format!(
            "embedding widths differ: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

fn check_same_shape(a: &FeatureMap, b: &FeatureMap) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(format!(
            "feature maps differ in shape: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

pub fn pairwise_cosine(a: &FeatureMap, b: &FeatureMap) -> Result<SimilarityMatrix> {
    check_same_dim(a, b)?;
    let mut sims = Array2::zeros((a.n_cells(), b.n_cells()));
    for (i, za) in a.cells().enumerate() {
        for (j, zb) in b.cells().enumerate() {
            sims[[i, j]] = cosine(za, zb);
        }
    }
    Ok(SimilarityMatrix { sims })
}

/// Euclidean distances between cells, usable directly as a cost matrix.
pub fn pairwise_euclidean(a: &FeatureMap, b: &FeatureMap) -> Result<CostMatrix> {
    check_same_dim(a, b)?;
    let mut d = Array2::zeros((a.n_cells(), b.n_cells()));
    for (i, za) in a.cells().enumerate() {
        for (j, zb) in b.cells().enumerate() {
            d[[i, j]] = euclidean(za, zb);
        }
    }
    CostMatrix::new(d)
}

/// Cosine distance `1 - s`.
pub fn cost_from_similarity(sims: &SimilarityMatrix) -> CostMatrix {
    CostMatrix::new(sims.sims.mapv(|s| (1.0 - s).max(0.0))).expect("cosine distance lies in [0, 2]")
}

/// `1 / g^2` on each of the `g x g` cells of both maps.
pub fn uniform_marginals(g: usize) -> Result<MarginalPair> {
    if g == 0 {
        return Err(invalid("grid size must be at least 1"));
    }
    MarginalPair::uniform(g * g, g * g)
}

/// Marginals from the correlation of each map's global feature with the
/// other map's cells.
///
/// `mu_s[i]` is driven by `cos(gap(a), b_i)` and `mu_t[i]` by
/// `cos(gap(b), a_i)`: each side's weights are read off the opposite map.
/// Negative correlations are clipped to zero; a side whose clipped weights
/// are all zero falls back to uniform.
pub fn cross_correlation_marginals(a: &FeatureMap, b: &FeatureMap) -> Result<MarginalPair> {
    check_same_shape(a, b)?;
    let (ga, gb) = (gap(a), gap(b));
    let mu_s = clipped_simplex(b.cells().map(|cell| cosine(ga.as_slice(), cell)));
    let mu_t = clipped_simplex(a.cells().map(|cell| cosine(gb.as_slice(), cell)));
    MarginalPair::new(mu_s, mu_t)
}

fn clipped_simplex(alpha: impl Iterator<Item = f64>) -> Vec<f64> {
    let gamma: Vec<f64> = alpha.map(|a| a.max(0.0)).collect();
    let total: f64 = gamma.iter().sum();
    if total > 0.0 {
        gamma.iter().map(|g| g / total).collect()
    } else {
        vec![1.0 / gamma.len() as f64; gamma.len()]
    }
}

/// Which marginals structural matching uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarginalMode {
    #[default]
    CrossCorrelation,
    Uniform,
}

impl MarginalMode {
    pub fn marginals(self, a: &FeatureMap, b: &FeatureMap) -> Result<MarginalPair> {
        match self {
            Self::CrossCorrelation => cross_correlation_marginals(a, b),
            Self::Uniform => {
                check_same_dim(a, b)?;
                MarginalPair::uniform(a.n_cells(), b.n_cells())
            }
        }
    }
}

/// Output of [`structural_similarity`]: the score and everything it was
/// computed from.
#[derive(Debug, Clone)]
pub struct StructuralMatch {
    pub score: f64,
    pub plan: TransportPlan,
    pub sims: SimilarityMatrix,
}

/// `sum_ij values_ij * plan_ij` in row-major order.
pub fn plan_weighted_sum(values: &Array2<f64>, plan: &Array2<f64>) -> f64 {
    values.iter().zip(plan.iter()).map(|(v, t)| v * t).sum()
}

pub fn structural_similarity(
    a: &FeatureMap,
    b: &FeatureMap,
    marginals: &MarginalPair,
    config: &SinkhornConfig,
) -> Result<StructuralMatch> {
    let sims = pairwise_cosine(a, b)?;
    let plan = sinkhorn(&cost_from_similarity(&sims), marginals, config)?;
    let score = plan_weighted_sum(&sims.sims, &plan.plan);
    Ok(StructuralMatch { score, plan, sims })
}

/// Structural distance with the Euclidean base distance; equals the
/// transport cost of the plan solved on that same cost.
pub fn structural_distance(
    a: &FeatureMap,
    b: &FeatureMap,
    marginals: &MarginalPair,
    config: &SinkhornConfig,
) -> Result<f64> {
    let cost = pairwise_euclidean(a, b)?;
    let plan = sinkhorn(&cost, marginals, config)?;
    Ok(plan_weighted_sum(cost.costs(), &plan.plan))
}

/// One location pair's share of the structural score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairContribution {
    pub i: usize,
    pub j: usize,
    /// Rescaled flow; 1.0 is what a uniform plan would assign.
    pub flow: f64,
    pub sim: f64,
}

impl PairContribution {
    pub fn contribution(&self) -> f64 {
        self.flow * self.sim
    }
}

/// A structural match broken down into parts.
#[derive(Debug, Clone)]
pub struct MatchExplanation {
    pub structural_score: f64,
    /// Cosine of the two global (GAP) embeddings.
    pub baseline_score: f64,
    pub marginal_s: Vec<f64>,
    pub marginal_t: Vec<f64>,
    /// The plan multiplied by the number of cell pairs (`G^4` for `G x G`
    /// grids), so a uniform plan reads as all ones.
    pub rescaled_plan: Array2<f64>,
    pub top_pairs: Vec<PairContribution>,
    pub plan: TransportPlan,
    pub sims: SimilarityMatrix,
}

/// Every location pair ordered by `flow * sim` descending, ties by `(i, j)`.
pub fn rank_pairs(rescaled_plan: &Array2<f64>, sims: &SimilarityMatrix) -> Vec<PairContribution> {
    let mut pairs: Vec<PairContribution> = rescaled_plan
        .indexed_iter()
        .map(|((i, j), &flow)| PairContribution {
            i,
            j,
            flow,
            sim: sims.sims[[i, j]],
        })
        .collect();
    pairs.sort_by(|x, y| {
        y.contribution()
            .total_cmp(&x.contribution())
            .then_with(|| (x.i, x.j).cmp(&(y.i, y.j)))
    });
    pairs
}

/// Cross-correlation marginals, structural similarity and the top `top_m`
/// contributing pairs.
pub fn explain_match(
    a: &FeatureMap,
    b: &FeatureMap,
    config: &SinkhornConfig,
    top_m: usize,
) -> Result<MatchExplanation> {
    explain_match_with(a, b, MarginalMode::CrossCorrelation, config, top_m)
}

pub fn explain_match_with(
    a: &FeatureMap,
    b: &FeatureMap,
    mode: MarginalMode,
    config: &SinkhornConfig,
    top_m: usize,
) -> Result<MatchExplanation> {
    if top_m == 0 {
        return Err(invalid("top_m must be at least 1"));
    }
    check_same_shape(a, b)?;
    let marginals = mode.marginals(a, b)?;
    let StructuralMatch { score, plan, sims } = structural_similarity(a, b, &marginals, config)?;
    let scale = (a.n_cells() * b.n_cells()) as f64;
    let rescaled_plan = plan.plan.mapv(|t| t * scale);
    let mut top_pairs = rank_pairs(&rescaled_plan, &sims);
    top_pairs.truncate(top_m);
    Ok(MatchExplanation {
        structural_score: score,
        baseline_score: cosine(gap(a).as_slice(), gap(b).as_slice()),
        marginal_s: marginals.mu_s().to_vec(),
        marginal_t: marginals.mu_t().to_vec(),
        rescaled_plan,
        top_pairs,
        plan,
        sims,
    })
}

/// Orders `(id, score)` pairs by score descending, then id ascending.
pub(crate) fn by_score_then_id(a: (&str, f64), b: (&str, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0))
}
