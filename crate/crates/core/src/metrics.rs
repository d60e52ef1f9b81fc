//! Retrieval metrics over label sequences: P@k, R-Precision and MAP@R.
//!
//! For a query with `R` same-class items in its candidate pool,
//!
//! - `P@k` is the fraction of the first `k` retrievals sharing its label,
//! - R-Precision is `P@R`,
//! - MAP@R is `(1/R) * sum_{i<=R} P(i)` with `P(i) = P@i` when the `i`-th
//!   retrieval is correct and 0 otherwise.
//!
//! Queries with `R = 0` are left out of every mean.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::retrieval::RankedList;

/// One query's retrieved labels, best first, with the query itself excluded.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledRanking {
    pub query_label: u32,
    pub retrieved_labels: Vec<u32>,
    /// Same-class items in the candidate pool.
    pub r_count: usize,
}

impl LabeledRanking {
    /// Ranking over a full candidate pool; `r_count` is read off the labels.
    pub fn from_full_pool(query_label: u32, retrieved_labels: Vec<u32>) -> Self {
        let r_count = retrieved_labels.iter().filter(|&&l| l == query_label).count();
        Self {
            query_label,
            retrieved_labels,
            r_count,
        }
    }

    fn hits(&self) -> impl Iterator<Item = bool> + '_ {
        self.retrieved_labels.iter().map(|&l| l == self.query_label)
    }

    fn check_r(&self) -> Result<usize> {
        let r = self.r_count;
        if r == 0 {
            return Err(invalid("query has no same-class candidates (R = 0)"));
        }
        if r > self.retrieved_labels.len() {
            return Err(invalid(format!(
                "R = {r} exceeds the {} retrieved items",
                self.retrieved_labels.len()
            )));
        }
        Ok(r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    #[serde(rename = "p@1")]
    pub p_at_1: f64,
    #[serde(rename = "rp")]
    pub r_precision: f64,
    #[serde(rename = "map@r")]
    pub map_at_r: f64,
    #[serde(rename = "queries")]
    pub query_count: usize,
}

pub fn precision_at_k(r: &LabeledRanking, k: usize) -> Result<f64> {
    if k == 0 || k > r.retrieved_labels.len() {
        return Err(invalid(format!(
            "k = {k} outside 1..={} retrieved items",
            r.retrieved_labels.len()
        )));
    }
    Ok(r.hits().take(k).filter(|&h| h).count() as f64 / k as f64)
}

pub fn r_precision(r: &LabeledRanking) -> Result<f64> {
    precision_at_k(r, r.check_r()?)
}

pub fn map_at_r(r: &LabeledRanking) -> Result<f64> {
    let big_r = r.check_r()?;
    let mut correct = 0usize;
    let mut sum = 0.0;
    for (i, hit) in r.hits().take(big_r).enumerate() {
        if hit {
            correct += 1;
            sum += correct as f64 / (i + 1) as f64;
        }
    }
    Ok(sum / big_r as f64)
}

/// Means of P@1, R-Precision and MAP@R over queries that have at least one
/// same-class candidate.
pub fn evaluate_labeled(rankings: &[LabeledRanking]) -> Result<MetricReport> {
    let mut sums = (0.0, 0.0, 0.0);
    let mut n = 0usize;
    for r in rankings.iter().filter(|r| r.r_count > 0) {
        sums.0 += precision_at_k(r, 1)?;
        sums.1 += r_precision(r)?;
        sums.2 += map_at_r(r)?;
        n += 1;
    }
    if n == 0 {
        return Err(Error::Data(
            "no query has a same-class candidate; every query was excluded".into(),
        ));
    }
    let n_f = n as f64;
    Ok(MetricReport {
        p_at_1: sums.0 / n_f,
        r_precision: sums.1 / n_f,
        map_at_r: sums.2 / n_f,
        query_count: n,
    })
}

/// Resolves ranked ids to labels and aggregates.
pub fn evaluate(
    rankings: &[RankedList],
    query_labels: &HashMap<String, u32>,
    gallery_labels: &HashMap<String, u32>,
) -> Result<MetricReport> {
    let lookup = |map: &HashMap<String, u32>, id: &str| {
        map.get(id)
            .copied()
            .ok_or_else(|| Error::Data(format!("no label for id {id:?}")))
    };
    let labeled = rankings
        .iter()
        .map(|list| {
            let q = lookup(query_labels, &list.query_id)?;
            let retrieved = list
                .entries
                .iter()
                .map(|e| lookup(gallery_labels, &e.gallery_id))
                .collect::<Result<Vec<_>>>()?;
            Ok(LabeledRanking::from_full_pool(q, retrieved))
        })
        .collect::<Result<Vec<_>>>()?;
    evaluate_labeled(&labeled)
}
