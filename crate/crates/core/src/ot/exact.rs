use std::collections::VecDeque;

use ndarray::Array2;

use super::{check_dims, marginal_violation, CostMatrix, MarginalPair, TransportPlan};
use crate::error::{invalid, Error, Result};

/// Largest `n_source * n_target` the exact oracle accepts.
pub const ORACLE_MAX_CELLS: usize = 256;

const MAX_PIVOTS: usize = 1_000_000;

/// Exact minimizer of `<C, T>` under the marginal constraints.
///
/// Transportation simplex: a northwest-corner basis, dual potentials from
/// the basis tree, Bland's rule for both the entering and the leaving cell.
pub fn exact_ot_oracle(cost: &CostMatrix, marginals: &MarginalPair) -> Result<TransportPlan> {
    check_dims(cost, marginals)?;
    let (m, n) = (cost.n_source(), cost.n_target());
    if m * n > ORACLE_MAX_CELLS {
        return Err(invalid(format!(
            "exact oracle refuses {m}x{n} instances (limit {ORACLE_MAX_CELLS} cells)"
        )));
    }
    let c = cost.costs();
    let mut basis = Basis::northwest(marginals.mu_s(), marginals.mu_t());
    let scale = c.iter().fold(1.0_f64, |a, b| a.max(b.abs()));
    let eps = 1e-12 * scale;

    let mut pivots = 0;
    loop {
        let (u, v) = basis.potentials(c);
        let entering = (0..m)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .find(|&(i, j)| !basis.is_basic[i * n + j] && c[[i, j]] - u[i] - v[j] < -eps);
        let Some((ei, ej)) = entering else { break };
        basis.pivot(ei, ej);
        pivots += 1;
        if pivots > MAX_PIVOTS {
            return Err(Error::Data("transportation simplex exceeded its pivot budget".into()));
        }
    }

    let mut plan = Array2::zeros((m, n));
    for &(i, j) in &basis.cells {
        plan[[i, j]] = basis.flow[i * n + j].max(0.0);
    }
    let marginal_error = marginal_violation(&plan, marginals);
    Ok(TransportPlan {
        plan,
        converged: true,
        iterations_used: pivots,
        marginal_error,
        diagnostic: None,
    })
}

/// A spanning tree of `m + n - 1` basic cells over the bipartite row/column graph.
struct Basis {
    m: usize,
    n: usize,
    cells: Vec<(usize, usize)>,
    is_basic: Vec<bool>,
    flow: Vec<f64>,
}

impl Basis {
    fn northwest(mu_s: &[f64], mu_t: &[f64]) -> Self {
        let (m, n) = (mu_s.len(), mu_t.len());
        let mut supply = mu_s.to_vec();
        let mut demand = mu_t.to_vec();
        let mut basis = Basis {
            m,
            n,
            cells: Vec::with_capacity(m + n - 1),
            is_basic: vec![false; m * n],
            flow: vec![0.0; m * n],
        };
        let (mut i, mut j) = (0, 0);
        loop {
            let x = supply[i].min(demand[j]);
            basis.cells.push((i, j));
            basis.is_basic[i * n + j] = true;
            basis.flow[i * n + j] = x;
            supply[i] -= x;
            demand[j] -= x;
            if i == m - 1 && j == n - 1 {
                break;
            }
            // Advance exactly one index per cell so the basis stays a tree.
            if i < m - 1 && (supply[i] <= demand[j] || j == n - 1) {
                i += 1;
            } else {
                j += 1;
            }
        }
        basis
    }

    /// Node ids: rows are `0..m`, columns are `m..m + n`.
    fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.m + self.n];
        for &(i, j) in &self.cells {
            adj[i].push(self.m + j);
            adj[self.m + j].push(i);
        }
        adj
    }

    /// Duals with `u_i + v_j = c_ij` on every basic cell and `u_0 = 0`.
    fn potentials(&self, c: &Array2<f64>) -> (Vec<f64>, Vec<f64>) {
        let (m, n) = (self.m, self.n);
        let adj = self.adjacency();
        let mut pot = vec![f64::NAN; m + n];
        pot[0] = 0.0;
        let mut queue = VecDeque::from([0]);
        while let Some(node) = queue.pop_front() {
            for &next in &adj[node] {
                if pot[next].is_nan() {
                    pot[next] = if node < m {
                        c[[node, next - m]] - pot[node]
                    } else {
                        c[[next, node - m]] - pot[node]
                    };
                    queue.push_back(next);
                }
            }
        }
        let v = pot.split_off(m);
        (pot, v)
    }

    fn pivot(&mut self, ei: usize, ej: usize) {
        let (m, n) = (self.m, self.n);
        // Tree path from column node `ej` to row node `ei`.
        let adj = self.adjacency();
        let mut parent = vec![usize::MAX; m + n];
        let start = m + ej;
        parent[start] = start;
        let mut queue = VecDeque::from([start]);
        while let Some(node) = queue.pop_front() {
            if node == ei {
                break;
            }
            for &next in &adj[node] {
                if parent[next] == usize::MAX {
                    parent[next] = node;
                    queue.push_back(next);
                }
            }
        }
        let mut path = vec![ei];
        while *path.last().unwrap() != start {
            path.push(parent[*path.last().unwrap()]);
        }
        path.reverse();

        // Edges along the path alternate -, +, -, ... starting at column `ej`.
        let cell_of = |a: usize, b: usize| if a < m { (a, b - m) } else { (b, a - m) };
        let cycle: Vec<((usize, usize), bool)> = path
            .windows(2)
            .enumerate()
            .map(|(k, w)| (cell_of(w[0], w[1]), k % 2 == 1))
            .collect();

        let theta = cycle
            .iter()
            .filter(|(_, plus)| !plus)
            .map(|((i, j), _)| self.flow[i * n + j])
            .fold(f64::INFINITY, f64::min);
        let leaving = cycle
            .iter()
            .filter(|((i, j), plus)| !plus && self.flow[i * n + j] == theta)
            .map(|(cell, _)| *cell)
            .min()
            .expect("cycle has a decreasing cell");

        for &((i, j), plus) in &cycle {
            if plus {
                self.flow[i * n + j] += theta;
            } else {
                self.flow[i * n + j] -= theta;
            }
        }
        self.flow[ei * n + ej] = theta;
        let (li, lj) = leaving;
        self.flow[li * n + lj] = 0.0;
        self.is_basic[li * n + lj] = false;
        self.is_basic[ei * n + ej] = true;
        let slot = self.cells.iter().position(|&c| c == leaving).unwrap();
        self.cells[slot] = (ei, ej);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ot::transport_cost;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = vec![];
        for p in permutations(n - 1) {
            for k in 0..=p.len() {
                let mut q = p.clone();
                q.insert(k, n - 1);
                out.push(q);
            }
        }
        out
    }

    #[test]
    fn single_cell_and_perfect_matching() {
        let one = exact_ot_oracle(
            &CostMatrix::new(array![[2.0]]).unwrap(),
            &MarginalPair::uniform(1, 1).unwrap(),
        )
        .unwrap();
        assert_eq!(one.plan, array![[1.0]]);
        let c = CostMatrix::new(array![[0.0, 1.0], [1.0, 0.0]]).unwrap();
        let p = exact_ot_oracle(&c, &MarginalPair::uniform(2, 2).unwrap()).unwrap();
        assert_eq!(transport_cost(&c, &p).unwrap(), 0.0);
    }

    #[test]
    fn three_by_three_beats_every_permutation_plan() {
        // Uniform 3x3 marginals: the LP optimum is attained at a vertex of the
        // Birkhoff polytope, so enumerate all six permutations as the oracle.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let rows: Vec<Vec<f64>> = (0..3).map(|_| (0..3).map(|_| rng.random::<f64>()).collect()).collect();
            let c = CostMatrix::from_rows(&rows).unwrap();
            let p = exact_ot_oracle(&c, &MarginalPair::uniform(3, 3).unwrap()).unwrap();
            let got = transport_cost(&c, &p).unwrap();
            let best = permutations(3)
                .iter()
                .map(|perm| perm.iter().enumerate().map(|(i, &j)| rows[i][j]).sum::<f64>() / 3.0)
                .fold(f64::INFINITY, f64::min);
            assert!(got <= best + 1e-12, "{got} > {best}");
            assert!((got - best).abs() < 1e-12);
            assert!(p.marginal_error < 1e-12);
        }
    }

    #[test]
    fn degenerate_and_zero_mass_marginals() {
        let c = CostMatrix::new(array![[1.0, 2.0, 3.0], [2.0, 1.0, 0.5], [0.0, 4.0, 1.0]]).unwrap();
        let m = MarginalPair::new(vec![0.5, 0.0, 0.5], vec![0.5, 0.5, 0.0]).unwrap();
        let p = exact_ot_oracle(&c, &m).unwrap();
        assert!(p.marginal_error < 1e-12);
        // Best: row0->col1 (2.0) and row2->col0 (0.0) => 1.0 versus 1.5 otherwise.
        assert!((transport_cost(&c, &p).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn size_guard() {
        let c = CostMatrix::new(Array2::zeros((16, 17))).unwrap();
        let m = MarginalPair::uniform(16, 17).unwrap();
        assert!(matches!(exact_ot_oracle(&c, &m), Err(Error::InvalidArgument(_))));
        let c = CostMatrix::new(Array2::zeros((16, 16))).unwrap();
        assert!(exact_ot_oracle(&c, &MarginalPair::uniform(16, 16).unwrap()).is_ok());
    }
}
