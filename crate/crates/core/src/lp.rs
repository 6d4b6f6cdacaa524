//! A small equality-form linear programming solver:
//! `min c^T x  s.t.  A x = b, x >= 0`.
//!
//! Two-phase primal simplex with Bland's rule on sparse columns and a
//! dense, periodically refreshed basis inverse. Built for the chained
//! transport programs, whose columns carry only a handful of nonzeros;
//! not intended as a general-purpose LP library.

use crate::numerics::Matrix;
use thiserror::Error;

const RC_TOL: f64 = 1e-9;
const PIVOT_TOL: f64 = 1e-11;
const REFRESH_EVERY: usize = 200;

#[derive(Debug, Clone, Error)]
pub enum LpError {
    #[error("infeasible: constraint '{label}' cannot be satisfied (residual {residual:.3e})")]
    Infeasible { label: String, residual: f64 },
    #[error("simplex exceeded the pivot budget ({0} pivots)")]
    NoConvergence(usize),
    #[error("LP is unbounded along variable {0}")]
    Unbounded(usize),
    #[error("basis became numerically singular")]
    SingularBasis,
}

/// Equality-constrained LP with sparse columns.
#[derive(Debug, Clone)]
pub struct SparseLp {
    num_rows: usize,
    cols: Vec<Vec<(usize, f64)>>,
    costs: Vec<f64>,
    rhs: Vec<f64>,
    row_labels: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub value: f64,
    /// One dual multiplier per constraint row.
    pub duals: Vec<f64>,
}

impl SparseLp {
    pub fn new(num_rows: usize, row_labels: Vec<String>, rhs: Vec<f64>) -> Self {
        assert_eq!(rhs.len(), num_rows);
        assert_eq!(row_labels.len(), num_rows);
        Self {
            num_rows,
            cols: Vec::new(),
            costs: Vec::new(),
            rhs,
            row_labels,
        }
    }

    /// Adds a variable with the given objective coefficient and sparse
    /// column; returns its index.
    pub fn add_var(&mut self, cost: f64, column: Vec<(usize, f64)>) -> usize {
        debug_assert!(column.iter().all(|&(r, _)| r < self.num_rows));
        self.cols.push(column);
        self.costs.push(cost);
        self.costs.len() - 1
    }

    pub fn num_vars(&self) -> usize {
        self.cols.len()
    }

    pub fn solve(&self, pivot_cap: usize) -> Result<LpSolution, LpError> {
        let m = self.num_rows;
        let n = self.cols.len();
        // Flip rows to make the right side nonnegative.
        let flip: Vec<f64> = self.rhs.iter().map(|&b| if b < 0.0 { -1.0 } else { 1.0 }).collect();
        let b: Vec<f64> = self.rhs.iter().zip(&flip).map(|(v, f)| v * f).collect();
        let col = |j: usize| -> Vec<(usize, f64)> {
            self.cols[j]
                .iter()
                .map(|&(r, v)| (r, v * flip[r]))
                .collect()
        };

        // Phase 1: artificial basis.
        let mut basis: Vec<usize> = (n..n + m).collect(); // >= n means artificial for row (idx - n)
        let mut binv = Matrix::identity(m);
        let mut xb = b.clone();
        let mut pivots = 0usize;
        // Dantzig pricing until the solve stalls on degenerate steps, then
        // Bland's rule, which cannot cycle.
        let mut bland = false;
        let mut stalled = 0usize;

        for phase in 0..2 {
            let cost_of = |j: usize| -> f64 {
                if phase == 0 {
                    if j >= n {
                        1.0
                    } else {
                        0.0
                    }
                } else if j >= n {
                    0.0
                } else {
                    self.costs[j]
                }
            };
            loop {
                // y = c_B^T B^{-1}
                let mut y = vec![0.0; m];
                for (pos, &bj) in basis.iter().enumerate() {
                    let cb = cost_of(bj);
                    if cb != 0.0 {
                        for r in 0..m {
                            y[r] += cb * binv.get(pos, r);
                        }
                    }
                }
                let mut in_basis = vec![false; n + m];
                for &bj in &basis {
                    in_basis[bj] = true;
                }
                let mut entering = None;
                let mut best_rc = -RC_TOL;
                for j in 0..n {
                    if in_basis[j] {
                        continue;
                    }
                    let mut rc = cost_of(j);
                    for &(r, v) in &self.cols[j] {
                        rc -= y[r] * v * flip[r];
                    }
                    if rc < best_rc {
                        entering = Some(j);
                        if bland {
                            break;
                        }
                        best_rc = rc;
                    }
                }
                let Some(j) = entering else {
                    break;
                };
                // direction d = B^{-1} a_j
                let aj = col(j);
                let mut d = vec![0.0; m];
                for (pos, dv) in d.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for &(r, v) in &aj {
                        acc += binv.get(pos, r) * v;
                    }
                    *dv = acc;
                }
                // ratio test with Bland leaving tie-break
                let mut theta = f64::INFINITY;
                let mut leave_pos = usize::MAX;
                let mut leave_var = usize::MAX;
                for pos in 0..m {
                    if d[pos] > PIVOT_TOL {
                        let ratio = xb[pos].max(0.0) / d[pos];
                        let better = ratio < theta - 1e-12
                            || (ratio < theta + 1e-12 && basis[pos] < leave_var);
                        if better {
                            theta = ratio;
                            leave_pos = pos;
                            leave_var = basis[pos];
                        }
                    }
                }
                if leave_pos == usize::MAX {
                    return Err(LpError::Unbounded(j));
                }
                // update solution and basis inverse (eta transform)
                for pos in 0..m {
                    xb[pos] -= theta * d[pos];
                }
                xb[leave_pos] = theta;
                let pivot = d[leave_pos];
                if pivot.abs() < PIVOT_TOL {
                    return Err(LpError::SingularBasis);
                }
                for r in 0..m {
                    let v = binv.get(leave_pos, r) / pivot;
                    binv.set(leave_pos, r, v);
                }
                for pos in 0..m {
                    if pos == leave_pos {
                        continue;
                    }
                    let factor = d[pos];
                    if factor == 0.0 {
                        continue;
                    }
                    for r in 0..m {
                        let v = binv.get(pos, r) - factor * binv.get(leave_pos, r);
                        binv.set(pos, r, v);
                    }
                }
                basis[leave_pos] = j;
                if theta <= 1e-13 {
                    stalled += 1;
                    if stalled > 50 {
                        bland = true;
                    }
                } else {
                    stalled = 0;
                }
                pivots += 1;
                if pivots.is_multiple_of(REFRESH_EVERY) {
                    (binv, xb) = self.refresh(&basis, &b, &flip)?;
                }
                if pivots > pivot_cap {
                    return Err(LpError::NoConvergence(pivots));
                }
            }
            if phase == 0 {
                let infeas: f64 = basis
                    .iter()
                    .zip(&xb)
                    .filter(|&(&bj, _)| bj >= n)
                    .map(|(_, &v)| v.max(0.0))
                    .sum();
                if infeas > 1e-9 {
                    // report the worst offending row
                    let (row, residual) = basis
                        .iter()
                        .zip(&xb)
                        .filter(|&(&bj, _)| bj >= n)
                        .map(|(&bj, &v)| (bj - n, v))
                        .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
                        .unwrap();
                    return Err(LpError::Infeasible {
                        label: self.row_labels[row].clone(),
                        residual,
                    });
                }
            }
        }

        let mut x = vec![0.0; n];
        for (pos, &bj) in basis.iter().enumerate() {
            if bj < n {
                x[bj] = xb[pos].max(0.0);
            }
        }
        let value = x.iter().zip(&self.costs).map(|(xi, ci)| xi * ci).sum();
        // duals in the original (unflipped) row convention
        let mut y = vec![0.0; m];
        for (pos, &bj) in basis.iter().enumerate() {
            let cb = if bj < n { self.costs[bj] } else { 0.0 };
            if cb != 0.0 {
                for r in 0..m {
                    y[r] += cb * binv.get(pos, r);
                }
            }
        }
        let duals = y.iter().zip(&flip).map(|(v, f)| v * f).collect();
        Ok(LpSolution { x, value, duals })
    }

    /// Rebuilds the dense basis inverse and basic solution from scratch.
    fn refresh(
        &self,
        basis: &[usize],
        b: &[f64],
        flip: &[f64],
    ) -> Result<(Matrix, Vec<f64>), LpError> {
        let m = self.num_rows;
        let n = self.cols.len();
        let mut bmat = Matrix::zeros(m, m);
        for (pos, &bj) in basis.iter().enumerate() {
            if bj < n {
                for &(r, v) in &self.cols[bj] {
                    bmat.set(r, pos, v * flip[r]);
                }
            } else {
                bmat.set(bj - n, pos, 1.0);
            }
        }
        let binv = bmat.inverse().map_err(|_| LpError::SingularBasis)?;
        let xb = (0..m)
            .map(|pos| (0..m).map(|r| binv.get(pos, r) * b[r]).sum())
            .collect();
        Ok((binv, xb))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::DiscreteMeasure;
    use crate::transport::{solve_kantorovich, CostMatrix};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn solves_a_tiny_assignment() {
        // min x01 + x10 over doubly stochastic 2x2 with uniform marginals:
        // row sums and column sums 0.5 each.
        let labels = (0..4).map(|i| format!("r{i}")).collect();
        let mut lp = SparseLp::new(4, labels, vec![0.5, 0.5, 0.5, 0.5]);
        // variables x00 x01 x10 x11; rows: r0,r1 = row sums, r2,r3 = col sums
        lp.add_var(0.0, vec![(0, 1.0), (2, 1.0)]);
        lp.add_var(1.0, vec![(0, 1.0), (3, 1.0)]);
        lp.add_var(1.0, vec![(1, 1.0), (2, 1.0)]);
        lp.add_var(0.0, vec![(1, 1.0), (3, 1.0)]);
        let sol = lp.solve(1000).unwrap();
        assert!(sol.value.abs() < 1e-12);
        assert!((sol.x[0] - 0.5).abs() < 1e-12);
        assert!((sol.x[3] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn detects_infeasibility() {
        let labels = vec!["first".to_string(), "second".to_string()];
        let mut lp = SparseLp::new(2, labels, vec![1.0, 2.0]);
        // x appears in both rows with the same coefficient: cannot satisfy both.
        lp.add_var(1.0, vec![(0, 1.0), (1, 1.0)]);
        let err = lp.solve(100).unwrap_err();
        assert!(matches!(err, LpError::Infeasible { .. }));
    }

    #[test]
    fn handles_negative_rhs_by_row_flips() {
        let labels = vec!["only".to_string()];
        let mut lp = SparseLp::new(1, labels, vec![-2.0]);
        lp.add_var(1.0, vec![(0, -1.0)]);
        let sol = lp.solve(100).unwrap();
        assert!((sol.x[0] - 2.0).abs() < 1e-12);
        assert!((sol.value - 2.0).abs() < 1e-12);
    }

    #[test]
    fn matches_transportation_simplex_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for _ in 0..10 {
            let m = rng.gen_range(2..6);
            let n = rng.gen_range(2..6);
            let atoms_a: Vec<Vec<f64>> = (0..m).map(|_| vec![rng.gen_range(-2.0..2.0)]).collect();
            let atoms_b: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.gen_range(-2.0..2.0)]).collect();
            let wa: Vec<f64> = (0..m).map(|_| rng.gen_range(0.1..1.0)).collect();
            let wb: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..1.0)).collect();
            let mu = DiscreteMeasure::from_masses(atoms_a, wa).unwrap();
            let nu = DiscreteMeasure::from_masses(atoms_b, wb).unwrap();
            let cost = CostMatrix::euclidean_power(mu.atoms(), nu.atoms(), 2.0).unwrap();
            let reference = solve_kantorovich(&mu, &nu, &cost).unwrap().value;

            let rows = mu.len() + nu.len();
            let mut rhs: Vec<f64> = mu.weights().to_vec();
            rhs.extend_from_slice(nu.weights());
            let labels = (0..rows).map(|i| format!("marginal{i}")).collect();
            let mut lp = SparseLp::new(rows, labels, rhs);
            for i in 0..mu.len() {
                for j in 0..nu.len() {
                    lp.add_var(cost.get(i, j), vec![(i, 1.0), (mu.len() + j, 1.0)]);
                }
            }
            let sol = lp.solve(10_000).unwrap();
            assert!(
                (sol.value - reference).abs() < 1e-9,
                "lp {} vs transportation {}",
                sol.value,
                reference
            );
        }
    }
}
