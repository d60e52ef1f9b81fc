//! Forward values of metric-learning losses with structure-augmented
//! distances and similarities.
//!
//! Distance-based losses replace `d(x, y)` by the mean of the global
//! Euclidean distance and the structural distance; similarity-based losses
//! replace `s(x, y)` by the mean of the global cosine and the structural
//! similarity. At a 1x1 grid the structural terms equal the global ones, so
//! every loss here reduces to its classical form.

use serde::{Deserialize, Serialize};

use crate::bank::Gallery;
use crate::error::{invalid, Error, Result};
use crate::fmap::{gap, FeatureMap};
use crate::matching::{cosine, euclidean, structural_distance, structural_similarity, MarginalMode};
use crate::ot::SinkhornConfig;

/// Solver settings for the structural terms. Marginals default to uniform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub sinkhorn: SinkhornConfig,
    pub marginals: MarginalMode,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            sinkhorn: SinkhornConfig::default(),
            marginals: MarginalMode::Uniform,
        }
    }
}

/// `(d(gap a, gap b) + d_struct(a, b)) / 2` with Euclidean `d`.
pub fn augmented_distance(a: &FeatureMap, b: &FeatureMap, config: &LossConfig) -> Result<f64> {
    let marginals = config.marginals.marginals(a, b)?;
    let global = euclidean(gap(a).as_slice(), gap(b).as_slice());
    let structural = structural_distance(a, b, &marginals, &config.sinkhorn)?;
    Ok(0.5 * (global + structural))
}

/// `(s(gap a, gap b) + s_struct(a, b)) / 2` with cosine `s`.
pub fn augmented_similarity(a: &FeatureMap, b: &FeatureMap, config: &LossConfig) -> Result<f64> {
    let marginals = config.marginals.marginals(a, b)?;
    let global = cosine(gap(a).as_slice(), gap(b).as_slice());
    let structural = structural_similarity(a, b, &marginals, &config.sinkhorn)?.score;
    Ok(0.5 * (global + structural))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginParams {
    /// Margin width.
    pub sigma: f64,
    /// Decision boundary.
    pub beta: f64,
}

impl MarginParams {
    fn validate(&self) -> Result<()> {
        if !(self.sigma.is_finite() && self.beta.is_finite()) || self.sigma < 0.0 {
            return Err(invalid(format!("bad margin parameters {self:?}")));
        }
        Ok(())
    }
}

/// Margin loss `(sigma + sign * (D - beta))_+` for one pair, where `sign` is
/// +1 for a positive pair and -1 for a negative one.
pub fn margin_loss(
    a: &FeatureMap,
    b: &FeatureMap,
    same_class: bool,
    params: &MarginParams,
    config: &LossConfig,
) -> Result<f64> {
    params.validate()?;
    let d = augmented_distance(a, b, config)?;
    let sign = if same_class { 1.0 } else { -1.0 };
    Ok((params.sigma + sign * (d - params.beta)).max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MsParams {
    pub alpha: f64,
    pub beta: f64,
    /// Similarity offset inside both log terms.
    pub lambda: f64,
    /// Mining margin.
    pub epsilon: f64,
}

impl MsParams {
    fn validate(&self) -> Result<()> {
        let finite = [self.alpha, self.beta, self.lambda, self.epsilon]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.alpha <= 0.0 || self.beta <= 0.0 {
            return Err(invalid(format!("bad multi-similarity parameters {self:?}")));
        }
        Ok(())
    }
}

/// Multi-similarity loss over a batch, averaged over anchors.
///
/// For anchor `k`, a pair `(k, l)` keeps its similarity when
/// `s > min_{p in P_k} s(k, p) - epsilon` or `s < max_{n in N_k} s(k, n) + epsilon`
/// and contributes `s* = 0` otherwise. An empty positive or negative set
/// makes its log term `log 1 = 0`.
pub fn ms_loss(batch: &Gallery, params: &MsParams, config: &LossConfig) -> Result<f64> {
    params.validate()?;
    let items = batch.items();
    if items.len() < 2 {
        return Err(invalid("multi-similarity needs at least two batch items"));
    }
    let n = items.len();
    let mut sim = vec![0.0; n * n];
    for k in 0..n {
        for l in 0..n {
            if k != l {
                sim[k * n + l] = augmented_similarity(&items[k].fmap, &items[l].fmap, config)?;
            }
        }
    }

    let mut total = 0.0;
    for k in 0..n {
        let others = (0..n).filter(|&l| l != k);
        let (pos, neg): (Vec<usize>, Vec<usize>) = others.partition(|&l| items[l].label == items[k].label);
        let s = |l: usize| sim[k * n + l];
        let min_pos = pos.iter().map(|&p| s(p)).fold(f64::INFINITY, f64::min);
        let max_neg = neg.iter().map(|&q| s(q)).fold(f64::NEG_INFINITY, f64::max);
        let gated = |l: usize| {
            let v = s(l);
            if v > min_pos - params.epsilon || v < max_neg + params.epsilon {
                v
            } else {
                0.0
            }
        };
        let pos_sum: f64 = pos
            .iter()
            .map(|&p| (-params.alpha * (gated(p) - params.lambda)).exp())
            .sum();
        let neg_sum: f64 = neg
            .iter()
            .map(|&q| (params.beta * (gated(q) - params.lambda)).exp())
            .sum();
        total += pos_sum.ln_1p() / params.alpha + neg_sum.ln_1p() / params.beta;
    }
    Ok(total / n as f64)
}

/// One spatial proxy per class; the global proxy is its average pooling.
#[derive(Debug, Clone, PartialEq)]
pub struct ProxyBank {
    proxies: Vec<(u32, FeatureMap)>,
}

impl ProxyBank {
    pub fn new(proxies: Vec<(u32, FeatureMap)>) -> Result<Self> {
        let Some((_, first)) = proxies.first() else {
            return Err(invalid("proxy bank is empty"));
        };
        let shape = first.shape();
        for (i, (class, map)) in proxies.iter().enumerate() {
            if map.shape() != shape {
                return Err(Error::ShapeMismatch(format!(
                    "proxy for class {class} has shape {:?}",
                    map.shape()
                )));
            }
            if proxies[..i].iter().any(|(c, _)| c == class) {
                return Err(invalid(format!("duplicate proxy for class {class}")));
            }
        }
        Ok(Self { proxies })
    }

    /// One proxy per label, taken from the first item carrying it.
    pub fn from_gallery(gallery: &Gallery) -> Result<Self> {
        let mut proxies: Vec<(u32, FeatureMap)> = Vec::new();
        for item in gallery.items() {
            if !proxies.iter().any(|(c, _)| *c == item.label) {
                proxies.push((item.label, item.fmap.clone()));
            }
        }
        Self::new(proxies)
    }

    pub fn proxies(&self) -> &[(u32, FeatureMap)] {
        &self.proxies
    }
}

/// ProxyNCA loss `-(1/B) sum_k log(exp(-d_pos) / sum_{c != y_k} exp(-d_c))`.
///
/// The denominator runs over negative classes only, so the value can be
/// negative.
pub fn proxy_nca_loss(batch: &Gallery, proxies: &ProxyBank, config: &LossConfig) -> Result<f64> {
    if proxies.proxies.len() < 2 {
        return Err(invalid("ProxyNCA needs proxies for at least two classes"));
    }
    let mut total = 0.0;
    for item in batch.items() {
        if !proxies.proxies.iter().any(|(c, _)| *c == item.label) {
            return Err(Error::Data(format!(
                "no proxy for class {} of item {:?}",
                item.label, item.id
            )));
        }
        let mut d_pos = 0.0;
        let mut neg = Vec::with_capacity(proxies.proxies.len() - 1);
        for (class, proxy) in &proxies.proxies {
            let d = augmented_distance(&item.fmap, proxy, config)?;
            if *class == item.label {
                d_pos = d;
            } else {
                neg.push(-d);
            }
        }
        let max = neg.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + neg.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        total += d_pos + lse;
    }
    Ok(total / batch.len() as f64)
}
