use ndarray::Array2;

use super::{check_dims, marginal_violation, CostMatrix, MarginalPair, SinkhornConfig, TransportPlan};
use crate::error::Result;

/// Entropic optimal transport by alternating marginal projections.
///
/// Rows and columns with zero mass are dropped from the iteration and come
/// back as exact zeros. Running out of iterations is not an error: the
/// iterate with the smallest marginal violation is returned with
/// `converged == false`.
pub fn sinkhorn(cost: &CostMatrix, marginals: &MarginalPair, config: &SinkhornConfig) -> Result<TransportPlan> {
    config.validate()?;
    check_dims(cost, marginals)?;

    let rows: Vec<usize> = active(marginals.mu_s());
    let cols: Vec<usize> = active(marginals.mu_t());
    let mu_s: Vec<f64> = rows.iter().map(|&i| marginals.mu_s()[i]).collect();
    let mu_t: Vec<f64> = cols.iter().map(|&j| marginals.mu_t()[j]).collect();

    // A single source or target leaves exactly one feasible coupling.
    if rows.len() == 1 || cols.len() == 1 {
        let mut plan = Array2::zeros((cost.n_source(), cost.n_target()));
        for (&i, &ms) in rows.iter().zip(&mu_s) {
            for (&j, &mt) in cols.iter().zip(&mu_t) {
                plan[[i, j]] = ms * mt;
            }
        }
        return Ok(finish(plan, marginals, config, 0, None));
    }

    let c = cost.costs();
    let (r, k) = (rows.len(), cols.len());
    let mut neg = Vec::with_capacity(r * k);
    for &i in &rows {
        for &j in &cols {
            neg.push(-c[[i, j]] / config.lambda);
        }
    }
    let mut neg_t = vec![0.0; r * k];
    for i in 0..r {
        for j in 0..k {
            neg_t[j * r + i] = neg[i * k + j];
        }
    }
    let problem = Compact {
        r,
        k,
        neg: &neg,
        neg_t: &neg_t,
        mu_s: &mu_s,
        mu_t: &mu_t,
        tol: config.tol,
        max_iters: config.max_iters,
    };

    let (compact, iters, diagnostic) = if config.log_domain {
        problem.solve_log()
    } else {
        problem.solve_scaling()
    };

    let mut plan = Array2::zeros((cost.n_source(), cost.n_target()));
    for (a, &i) in rows.iter().enumerate() {
        for (b, &j) in cols.iter().enumerate() {
            plan[[i, j]] = compact[a * k + b];
        }
    }
    Ok(finish(plan, marginals, config, iters, diagnostic))
}

fn active(mu: &[f64]) -> Vec<usize> {
    mu.iter()
        .enumerate()
        .filter(|(_, m)| **m > 0.0)
        .map(|(i, _)| i)
        .collect()
}

fn finish(
    plan: Array2<f64>,
    marginals: &MarginalPair,
    config: &SinkhornConfig,
    iterations_used: usize,
    diagnostic: Option<String>,
) -> TransportPlan {
    let marginal_error = marginal_violation(&plan, marginals);
    TransportPlan {
        plan,
        converged: diagnostic.is_none() && marginal_error <= config.tol,
        iterations_used,
        marginal_error,
        diagnostic,
    }
}

/// The problem restricted to positive-mass rows and columns, with
/// `neg[i * k + j] = -C_ij / lambda` and its transpose.
struct Compact<'a> {
    r: usize,
    k: usize,
    neg: &'a [f64],
    neg_t: &'a [f64],
    mu_s: &'a [f64],
    mu_t: &'a [f64],
    tol: f64,
    max_iters: usize,
}

#[inline]
fn logsumexp(row: &[f64], shift: &[f64]) -> f64 {
    let mut max = f64::NEG_INFINITY;
    for (x, s) in row.iter().zip(shift) {
        max = max.max(x + s);
    }
    let mut sum = 0.0;
    for (x, s) in row.iter().zip(shift) {
        sum += (x + s - max).exp();
    }
    max + sum.ln()
}

impl Compact<'_> {
    /// Iterates on `f = log a`, `g = log b`. Each sweep first measures the
    /// row violation of the current iterate (its columns are exact after the
    /// previous `g` update) and reuses the same reductions for the `f` update.
    fn solve_log(&self) -> (Vec<f64>, usize, Option<String>) {
        let (r, k) = (self.r, self.k);
        let log_mu_s: Vec<f64> = self.mu_s.iter().map(|m| m.ln()).collect();
        let log_mu_t: Vec<f64> = self.mu_t.iter().map(|m| m.ln()).collect();
        let mut f = vec![0.0; r];
        let mut g = vec![0.0; k];
        let mut lse = vec![0.0; r];
        let mut best: Option<(f64, Vec<f64>, Vec<f64>)> = None;
        let mut iters = 0;

        loop {
            for (i, l) in lse.iter_mut().enumerate() {
                *l = logsumexp(&self.neg[i * k..(i + 1) * k], &g);
            }
            if iters > 0 {
                let err = (0..r)
                    .map(|i| ((f[i] + lse[i]).exp() - self.mu_s[i]).abs())
                    .fold(0.0, f64::max);
                if best.as_ref().is_none_or(|(e, _, _)| err < *e) {
                    best = Some((err, f.clone(), g.clone()));
                }
                if err <= self.tol || iters == self.max_iters {
                    break;
                }
            }
            for i in 0..r {
                f[i] = log_mu_s[i] - lse[i];
            }
            for j in 0..k {
                g[j] = log_mu_t[j] - logsumexp(&self.neg_t[j * r..(j + 1) * r], &f);
            }
            iters += 1;
        }

        let (_, f, g) = best.expect("at least one sweep ran");
        let mut plan = vec![0.0; r * k];
        for i in 0..r {
            for j in 0..k {
                plan[i * k + j] = (f[i] + g[j] + self.neg[i * k + j]).exp();
            }
        }
        (plan, iters, None)
    }

    /// Plain matrix-scaling form, `a <- mu_s / K b`, `b <- mu_t / K^T a`.
    /// Underflow of `K b` or overflow of the scalings stops the iteration
    /// with a diagnostic.
    fn solve_scaling(&self) -> (Vec<f64>, usize, Option<String>) {
        let (r, k) = (self.r, self.k);
        let kern: Vec<f64> = self.neg.iter().map(|x| x.exp()).collect();
        let mut a = vec![1.0; r];
        let mut b = vec![1.0; k];
        let mut kb = vec![0.0; r];
        let mut best: Option<(f64, Vec<f64>, Vec<f64>)> = None;
        let mut iters = 0;
        let mut diagnostic = None;

        loop {
            for i in 0..r {
                kb[i] = kern[i * k..(i + 1) * k].iter().zip(&b).map(|(x, y)| x * y).sum();
            }
            if iters > 0 {
                let err = (0..r).map(|i| (a[i] * kb[i] - self.mu_s[i]).abs()).fold(0.0, f64::max);
                if err.is_finite() && best.as_ref().is_none_or(|(e, _, _)| err < *e) {
                    best = Some((err, a.clone(), b.clone()));
                }
                if err <= self.tol || iters == self.max_iters {
                    break;
                }
            }
            let next_a: Vec<f64> = (0..r).map(|i| self.mu_s[i] / kb[i]).collect();
            let next_b: Vec<f64> = (0..k)
                .map(|j| {
                    let kta: f64 = (0..r).map(|i| kern[i * k + j] * next_a[i]).sum();
                    self.mu_t[j] / kta
                })
                .collect();
            if next_a.iter().chain(&next_b).any(|v| !v.is_finite() || *v == 0.0) {
                diagnostic = Some(format!(
                    "kernel scaling left the floating-point range after {iters} iterations; \
                     use the log-domain solver or a larger lambda"
                ));
                break;
            }
            a = next_a;
            b = next_b;
            iters += 1;
        }

        let plan = match best {
            Some((_, a, b)) => (0..r * k).map(|x| a[x / k] * kern[x] * b[x % k]).collect(),
            // Nothing usable was produced; fall back to the independent coupling.
            None => (0..r * k).map(|x| self.mu_s[x / k] * self.mu_t[x % k]).collect(),
        };
        (plan, iters, diagnostic)
    }
}
