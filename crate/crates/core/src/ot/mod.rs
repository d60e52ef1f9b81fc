//! Discrete optimal transport between two probability vectors.
//!
//! [`sinkhorn`] solves the entropy-regularized problem
//! `min <C, T> + lambda * sum T (log T - 1)` subject to `T 1 = mu_s`,
//! `T^T 1 = mu_t`, whose solution has the form `diag(a) K diag(b)` with
//! `K = exp(-C / lambda)`. [`exact_ot_oracle`] solves the unregularized
//! linear program on small instances and exists to check the former.

mod exact;
mod sinkhorn;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub use exact::{exact_ot_oracle, ORACLE_MAX_CELLS};
pub use sinkhorn::sinkhorn;

/// Tolerance on `sum(mu) == 1` accepted by [`MarginalPair::new`].
pub const SIMPLEX_TOL: f64 = 1e-9;

/// Nonnegative, finite transport costs; rows index the source, columns the target.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    costs: Array2<f64>,
}

impl CostMatrix {
    pub fn new(costs: Array2<f64>) -> Result<Self> {
        if costs.nrows() == 0 || costs.ncols() == 0 {
            return Err(invalid("cost matrix must be nonempty"));
        }
        if let Some(bad) = costs.iter().find(|c| !c.is_finite() || **c < 0.0) {
            return Err(invalid(format!(
                "cost entries must be finite and nonnegative, found {bad}"
            )));
        }
        Ok(Self { costs })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_target = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_target) {
            return Err(Error::ShapeMismatch("cost rows have differing lengths".into()));
        }
        let flat = rows.concat();
        let costs =
            Array2::from_shape_vec((rows.len(), n_target), flat).map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        Self::new(costs)
    }

    pub fn n_source(&self) -> usize {
        self.costs.nrows()
    }

    pub fn n_target(&self) -> usize {
        self.costs.ncols()
    }

    pub fn costs(&self) -> &Array2<f64> {
        &self.costs
    }

    pub fn transposed(&self) -> Self {
        Self {
            costs: self.costs.t().to_owned(),
        }
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(&self.costs * factor)
    }
}

/// Source and target probability vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalPair {
    mu_s: Vec<f64>,
    mu_t: Vec<f64>,
}

impl MarginalPair {
    pub fn new(mu_s: Vec<f64>, mu_t: Vec<f64>) -> Result<Self> {
        check_simplex("mu_s", &mu_s)?;
        check_simplex("mu_t", &mu_t)?;
        Ok(Self { mu_s, mu_t })
    }

    pub fn uniform(n_source: usize, n_target: usize) -> Result<Self> {
        if n_source == 0 || n_target == 0 {
            return Err(invalid("marginals need at least one entry per side"));
        }
        Ok(Self {
            mu_s: vec![1.0 / n_source as f64; n_source],
            mu_t: vec![1.0 / n_target as f64; n_target],
        })
    }

    pub fn mu_s(&self) -> &[f64] {
        &self.mu_s
    }

    pub fn mu_t(&self) -> &[f64] {
        &self.mu_t
    }

    pub fn swapped(&self) -> Self {
        Self {
            mu_s: self.mu_t.clone(),
            mu_t: self.mu_s.clone(),
        }
    }

    /// Reorders both sides: entry `k` of the result is entry `perm[k]` of the input.
    pub fn permuted(&self, perm_s: &[usize], perm_t: &[usize]) -> Self {
        Self {
            mu_s: perm_s.iter().map(|&k| self.mu_s[k]).collect(),
            mu_t: perm_t.iter().map(|&k| self.mu_t[k]).collect(),
        }
    }
}

fn check_simplex(name: &str, mu: &[f64]) -> Result<()> {
    if mu.is_empty() {
        return Err(invalid(format!("{name} is empty")));
    }
    if let Some(bad) = mu.iter().find(|m| !m.is_finite() || **m < 0.0) {
        return Err(invalid(format!("{name} has a negative or non-finite entry {bad}")));
    }
    let sum: f64 = mu.iter().sum();
    if (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(invalid(format!("{name} sums to {sum}, expected 1")));
    }
    Ok(())
}

/// Parameters of the Sinkhorn iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinkhornConfig {
    /// Entropic regularization strength.
    pub lambda: f64,
    pub max_iters: usize,
    /// Stop once the max-norm marginal violation is at most this.
    pub tol: f64,
    /// Iterate on log-scalings with log-sum-exp reductions.
    pub log_domain: bool,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self {
            lambda: 0.05,
            max_iters: 100,
            tol: 1e-6,
            log_domain: true,
        }
    }
}

impl SinkhornConfig {
    pub fn with_lambda(lambda: f64) -> Self {
        Self {
            lambda,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(invalid(format!(
                "lambda must be positive and finite, got {}",
                self.lambda
            )));
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(invalid(format!("tol must be positive and finite, got {}", self.tol)));
        }
        if self.max_iters == 0 {
            return Err(invalid("max_iters must be at least 1"));
        }
        Ok(())
    }
}

/// A coupling between source and target together with solver diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub plan: Array2<f64>,
    pub converged: bool,
    pub iterations_used: usize,
    /// `max(|T 1 - mu_s|_inf, |T^T 1 - mu_t|_inf)` of `plan` as returned.
    pub marginal_error: f64,
    /// Set when the solver stopped for a numerical reason rather than
    /// convergence or the iteration cap.
    pub diagnostic: Option<String>,
}

impl TransportPlan {
    pub fn total_mass(&self) -> f64 {
        self.plan.sum()
    }
}

/// Max-norm violation of the marginal constraints by `plan`.
pub fn marginal_violation(plan: &Array2<f64>, marginals: &MarginalPair) -> f64 {
    let rows = plan
        .rows()
        .into_iter()
        .zip(marginals.mu_s())
        .map(|(r, m)| (r.sum() - m).abs());
    let cols = plan
        .columns()
        .into_iter()
        .zip(marginals.mu_t())
        .map(|(c, m)| (c.sum() - m).abs());
    rows.chain(cols).fold(0.0, f64::max)
}

/// `tr(C T^T)`, the total cost of moving mass along `plan`.
pub fn transport_cost(cost: &CostMatrix, plan: &TransportPlan) -> Result<f64> {
    if cost.costs.dim() != plan.plan.dim() {
        return Err(Error::ShapeMismatch(format!(
            "cost is {:?} but plan is {:?}",
            cost.costs.dim(),
            plan.plan.dim()
        )));
    }
    Ok(cost.costs.iter().zip(plan.plan.iter()).map(|(c, t)| c * t).sum())
}

fn check_dims(cost: &CostMatrix, marginals: &MarginalPair) -> Result<()> {
    if cost.n_source() != marginals.mu_s.len() || cost.n_target() != marginals.mu_t.len() {
        return Err(invalid(format!(
            "cost matrix is {}x{} but marginals have lengths {} and {}",
            cost.n_source(),
            cost.n_target(),
            marginals.mu_s.len(),
            marginals.mu_t.len()
        )));
    }
    Ok(())
}
