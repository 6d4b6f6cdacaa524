//! Exact optimal transport on discrete measures.
//!
//! The Kantorovich LP is solved by a transportation simplex: the basis is
//! a spanning tree of the bipartite source/target graph, the initial basic
//! solution comes from the northwest-corner rule, the entering variable
//! follows Bland's rule and the leaving variable breaks ties
//! lexicographically. Degenerate marginals are handled by the standard
//! epsilon perturbation, removed after the solve by re-solving the flows
//! of the final basis against the original marginals.
//!
//! On top of the LP sit the p-Wasserstein distances, the Gramian-weighted
//! quadratic control cost, and the squared Wasserstein distance of the
//! transformed measures, which equals twice the Kantorovich optimum under
//! that control cost.

use crate::lti::{self, LinearSystem, LtiError};
use crate::measures::{DiscreteMeasure, MeasureError};
use crate::numerics::{psd_inv_sqrt, sub_vec, Matrix, NumericsError};
use thiserror::Error;

/// Reduced costs above this threshold count as nonnegative.
const REDUCED_COST_TOL: f64 = 1e-11;

/// Marginal perturbation for degenerate vertices.
const PERTURBATION: f64 = 1e-11;

#[derive(Debug, Clone, Error)]
pub enum TransportError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error(transparent)]
    Lti(#[from] LtiError),
    #[error("marginal masses differ by {0:.3e}")]
    Unbalanced(f64),
    #[error("simplex exceeded the pivot budget ({0} pivots)")]
    NoConvergence(usize),
    #[error("instance too large for brute force: {0}")]
    TooLarge(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

/// Nonnegative finite cost matrix over source x target atoms.
#[derive(Debug, Clone)]
pub struct CostMatrix(Matrix);

impl CostMatrix {
    pub fn new(m: Matrix) -> Result<Self, TransportError> {
        if m.data().iter().any(|&v| !v.is_finite() || v < 0.0) {
            return Err(TransportError::DimensionMismatch(
                "cost entries must be finite and nonnegative".to_string(),
            ));
        }
        Ok(Self(m))
    }

    pub fn from_fn(
        n_source: usize,
        n_target: usize,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self, TransportError> {
        Self::new(Matrix::from_fn(n_source, n_target, &mut f))
    }

    /// `c(i, j) = ||target_j - source_i||^p`.
    pub fn euclidean_power(
        source: &[Vec<f64>],
        target: &[Vec<f64>],
        p: f64,
    ) -> Result<Self, TransportError> {
        Self::from_fn(source.len(), target.len(), |i, j| {
            crate::numerics::norm(&sub_vec(&target[j], &source[i])).powf(p)
        })
    }

    pub fn n_source(&self) -> usize {
        self.0.rows()
    }

    pub fn n_target(&self) -> usize {
        self.0.cols()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0.get(i, j)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }
}

/// A nonnegative coupling whose row sums match the source weights and
/// column sums match the target weights.
#[derive(Debug, Clone)]
pub struct TransportPlan {
    coupling: Matrix,
    source_weights: Vec<f64>,
    target_weights: Vec<f64>,
}

impl TransportPlan {
    pub fn coupling(&self) -> &Matrix {
        &self.coupling
    }

    pub fn mass(&self, i: usize, j: usize) -> f64 {
        self.coupling.get(i, j)
    }

    /// Entries above `threshold`, as `(source, target, mass)`.
    pub fn support(&self, threshold: f64) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for i in 0..self.coupling.rows() {
            for j in 0..self.coupling.cols() {
                let v = self.coupling.get(i, j);
                if v > threshold {
                    out.push((i, j, v));
                }
            }
        }
        out
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.coupling.rows())
            .map(|i| self.coupling.row(i).iter().sum())
            .collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        (0..self.coupling.cols())
            .map(|j| {
                (0..self.coupling.rows())
                    .map(|i| self.coupling.get(i, j))
                    .sum()
            })
            .collect()
    }

    /// Largest violation of the marginal constraints.
    pub fn feasibility_error(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for (have, want) in self.row_sums().iter().zip(&self.source_weights) {
            worst = worst.max((have - want).abs());
        }
        for (have, want) in self.col_sums().iter().zip(&self.target_weights) {
            worst = worst.max((have - want).abs());
        }
        worst
    }
}

/// Solver output: vertex-optimal plan, optimal value, and the dual
/// potentials certifying optimality.
#[derive(Debug, Clone)]
pub struct TransportSolution {
    pub plan: TransportPlan,
    pub value: f64,
    pub source_potentials: Vec<f64>,
    pub target_potentials: Vec<f64>,
}

/// Solves the discrete Kantorovich problem by transportation simplex.
pub fn solve_kantorovich(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    cost: &CostMatrix,
) -> Result<TransportSolution, TransportError> {
    if cost.n_source() != mu.len() || cost.n_target() != nu.len() {
        return Err(TransportError::DimensionMismatch(format!(
            "cost is {}x{} but measures have {} and {} atoms",
            cost.n_source(),
            cost.n_target(),
            mu.len(),
            nu.len()
        )));
    }
    solve_transportation(mu.weights(), nu.weights(), cost)
}

/// Raw transportation solve on explicit marginals (must balance).
pub(crate) fn solve_transportation(
    supply: &[f64],
    demand: &[f64],
    cost: &CostMatrix,
) -> Result<TransportSolution, TransportError> {
    let m = supply.len();
    let n = demand.len();
    let s: f64 = supply.iter().sum();
    let d: f64 = demand.iter().sum();
    if (s - d).abs() > 1e-8 {
        return Err(TransportError::Unbalanced((s - d).abs()));
    }
    // Epsilon perturbation keeps the vertices nondegenerate.
    let a: Vec<f64> = supply.iter().map(|w| w + PERTURBATION).collect();
    let mut b: Vec<f64> = demand.to_vec();
    b[n - 1] += m as f64 * PERTURBATION + (s - d);

    let mut state = SimplexState::northwest(&a, &b);
    let pivot_cap = 10 * m * n;
    let mut pivots = 0;
    // Block pricing runs fast on typical instances; repeated degenerate
    // pivots flip the rule to Bland's, which cannot cycle.
    let mut bland = false;
    let mut stalled = 0usize;
    loop {
        state.update_duals(cost);
        let Some(entering) = state.entering(cost, bland) else {
            // Optimal basis found; drop the perturbation by re-solving the
            // tree flows against the original marginals.
            let flows = state.tree_flows(supply, demand);
            let mut coupling = Matrix::zeros(m, n);
            let mut value = 0.0;
            for (&(i, j), &f) in state.basis.iter().zip(&flows) {
                let f = f.max(0.0);
                coupling.set(i, j, f);
                value += cost.get(i, j) * f;
            }
            let plan = TransportPlan {
                coupling,
                source_weights: supply.to_vec(),
                target_weights: demand.to_vec(),
            };
            return Ok(TransportSolution {
                plan,
                value,
                source_potentials: state.u,
                target_potentials: state.v,
            });
        };
        let moved = state.pivot(entering);
        if moved <= PERTURBATION * 1e-3 {
            stalled += 1;
            if stalled > 50 {
                bland = true;
            }
        } else {
            stalled = 0;
        }
        pivots += 1;
        if pivots > pivot_cap {
            return Err(TransportError::NoConvergence(pivots));
        }
    }
}

/// Basis state of the transportation simplex: a spanning tree of the
/// bipartite graph with one flow value per tree arc. Tree adjacency,
/// dual potentials and the search buffers persist across pivots, and the
/// pricing cursor implements block search over the cost matrix.
struct SimplexState {
    m: usize,
    n: usize,
    basis: Vec<(usize, usize)>,
    flow: Vec<f64>,
    in_basis: Vec<bool>,
    /// basis-arc indices incident to each node (sources then targets)
    adj: Vec<Vec<usize>>,
    u: Vec<f64>,
    v: Vec<f64>,
    cursor: usize,
    block: usize,
    // reusable search buffers
    prev_arc: Vec<usize>,
    prev_node: Vec<usize>,
    seen: Vec<bool>,
    stack: Vec<usize>,
}

impl SimplexState {
    fn northwest(a: &[f64], b: &[f64]) -> Self {
        let (m, n) = (a.len(), b.len());
        let mut a = a.to_vec();
        let mut b = b.to_vec();
        let mut basis = Vec::with_capacity(m + n - 1);
        let mut flow = Vec::with_capacity(m + n - 1);
        let (mut i, mut j) = (0usize, 0usize);
        loop {
            let q = a[i].min(b[j]);
            basis.push((i, j));
            flow.push(q);
            a[i] -= q;
            b[j] -= q;
            if i == m - 1 && j == n - 1 {
                break;
            }
            if a[i] <= b[j] && i + 1 < m {
                i += 1;
            } else if j + 1 < n {
                j += 1;
            } else {
                i += 1;
            }
        }
        debug_assert_eq!(basis.len(), m + n - 1);
        let mut in_basis = vec![false; m * n];
        let mut adj = vec![Vec::new(); m + n];
        for (idx, &(i, j)) in basis.iter().enumerate() {
            in_basis[i * n + j] = true;
            adj[i].push(idx);
            adj[m + j].push(idx);
        }
        let total = m + n;
        Self {
            m,
            n,
            basis,
            flow,
            in_basis,
            adj,
            u: vec![0.0; m],
            v: vec![0.0; n],
            cursor: 0,
            block: ((m * n) as f64).sqrt() as usize + 16,
            prev_arc: vec![usize::MAX; total],
            prev_node: vec![usize::MAX; total],
            seen: vec![false; total],
            stack: Vec::with_capacity(total),
        }
    }

    /// Recomputes the dual potentials over the tree with `u[0] = 0`.
    fn update_duals(&mut self, cost: &CostMatrix) {
        self.u.iter_mut().for_each(|x| *x = f64::NAN);
        self.v.iter_mut().for_each(|x| *x = f64::NAN);
        self.u[0] = 0.0;
        self.stack.clear();
        self.stack.push(0);
        while let Some(node) = self.stack.pop() {
            for &arc in &self.adj[node] {
                let (i, j) = self.basis[arc];
                if node < self.m {
                    if self.v[j].is_nan() {
                        self.v[j] = cost.get(i, j) - self.u[i];
                        self.stack.push(self.m + j);
                    }
                } else if self.u[i].is_nan() {
                    self.u[i] = cost.get(i, j) - self.v[j];
                    self.stack.push(i);
                }
            }
        }
    }

    /// Entering arc by block search: scan blocks from a rotating cursor
    /// and take the block's most negative reduced cost; a full wrap with
    /// no candidate proves optimality. Under `bland`, the scan starts at
    /// arc 0 and the first negative arc wins (anti-cycling order).
    fn entering(&mut self, cost: &CostMatrix, bland: bool) -> Option<(usize, usize)> {
        let arcs = self.m * self.n;
        if bland {
            for flat in 0..arcs {
                if self.in_basis[flat] {
                    continue;
                }
                let (i, j) = (flat / self.n, flat % self.n);
                if cost.get(i, j) - self.u[i] - self.v[j] < -REDUCED_COST_TOL {
                    return Some((i, j));
                }
            }
            return None;
        }
        let mut scanned = 0usize;
        let mut best: Option<(usize, f64)> = None;
        let mut pos = self.cursor;
        while scanned < arcs {
            let stop = (arcs - scanned).min(self.block);
            for _ in 0..stop {
                if !self.in_basis[pos] {
                    let (i, j) = (pos / self.n, pos % self.n);
                    let rc = cost.get(i, j) - self.u[i] - self.v[j];
                    if rc < -REDUCED_COST_TOL && best.is_none_or(|(_, b)| rc < b) {
                        best = Some((pos, rc));
                    }
                }
                pos += 1;
                if pos == arcs {
                    pos = 0;
                }
            }
            scanned += stop;
            if let Some((flat, _)) = best {
                self.cursor = pos;
                return Some((flat / self.n, flat % self.n));
            }
        }
        None
    }

    /// One pivot: push flow around the unique cycle closed by the entering
    /// arc, removing the lexicographically smallest blocking arc. Returns
    /// the amount of flow moved.
    fn pivot(&mut self, entering: (usize, usize)) -> f64 {
        let (ei, ej) = entering;
        // Path from source node ei to target node ej through the tree.
        let total = self.m + self.n;
        for idx in 0..total {
            self.seen[idx] = false;
        }
        let start = ei;
        let goal = self.m + ej;
        self.seen[start] = true;
        self.stack.clear();
        self.stack.push(start);
        while let Some(node) = self.stack.pop() {
            if node == goal {
                break;
            }
            for &arc in &self.adj[node] {
                let (i, j) = self.basis[arc];
                let other = if node < self.m { self.m + j } else { i };
                if !self.seen[other] {
                    self.seen[other] = true;
                    self.prev_arc[other] = arc;
                    self.prev_node[other] = node;
                    self.stack.push(other);
                }
            }
        }
        debug_assert!(self.seen[goal], "basis must be a spanning tree");
        // Walk back from the target node. Arcs traversed source->target
        // oppose the entering flow and lose mass; the others gain it.
        let mut minus_arcs: Vec<usize> = Vec::new();
        let mut plus_arcs: Vec<usize> = Vec::new();
        let mut node = goal;
        while node != start {
            let arc = self.prev_arc[node];
            let from = self.prev_node[node];
            if from < self.m {
                minus_arcs.push(arc);
            } else {
                plus_arcs.push(arc);
            }
            node = from;
        }
        let mut delta = f64::INFINITY;
        for &arc in &minus_arcs {
            delta = delta.min(self.flow[arc]);
        }
        let mut leaving = usize::MAX;
        let mut leaving_key = (usize::MAX, usize::MAX);
        for &arc in &minus_arcs {
            if self.flow[arc] <= delta && self.basis[arc] < leaving_key {
                leaving_key = self.basis[arc];
                leaving = arc;
            }
        }
        debug_assert!(leaving != usize::MAX);
        for &arc in &plus_arcs {
            self.flow[arc] += delta;
        }
        for &arc in &minus_arcs {
            self.flow[arc] -= delta;
        }
        let (li, lj) = self.basis[leaving];
        self.in_basis[li * self.n + lj] = false;
        self.in_basis[ei * self.n + ej] = true;
        // splice the tree: drop the leaving arc, attach the entering one
        self.adj[li].retain(|&arc| arc != leaving);
        self.adj[self.m + lj].retain(|&arc| arc != leaving);
        self.adj[ei].push(leaving);
        self.adj[self.m + ej].push(leaving);
        self.basis[leaving] = (ei, ej);
        self.flow[leaving] = delta;
        delta
    }

    /// Exact flows of the current basis tree for the given marginals,
    /// by repeated leaf elimination.
    fn tree_flows(&self, supply: &[f64], demand: &[f64]) -> Vec<f64> {
        let total = self.m + self.n;
        let mut residual: Vec<f64> = supply
            .iter()
            .copied()
            .chain(demand.iter().copied())
            .collect();
        let mut degree: Vec<usize> = self.adj.iter().map(Vec::len).collect();
        let mut flows = vec![0.0; self.basis.len()];
        let mut done = vec![false; self.basis.len()];
        let mut leaves: Vec<usize> = (0..total).filter(|&v| degree[v] == 1).collect();
        while let Some(leaf) = leaves.pop() {
            let Some(&arc) = self.adj[leaf].iter().find(|&&a| !done[a]) else {
                continue;
            };
            let (i, j) = self.basis[arc];
            flows[arc] = residual[leaf];
            done[arc] = true;
            let other = if leaf < self.m { self.m + j } else { i };
            residual[other] -= residual[leaf];
            residual[leaf] = 0.0;
            degree[leaf] -= 1;
            degree[other] -= 1;
            if degree[other] == 1 {
                leaves.push(other);
            }
        }
        flows
    }
}

/// Exact optimum for small instances, independent of the simplex path.
///
/// Uniform marginals with equal atom counts (at most six) are solved by
/// enumerating permutation couplings; otherwise, with at most four atoms
/// per side, every spanning-tree vertex of the transportation polytope is
/// enumerated and the best feasible one returned.
pub fn brute_force_ot(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    cost: &CostMatrix,
) -> Result<f64, TransportError> {
    if cost.n_source() != mu.len() || cost.n_target() != nu.len() {
        return Err(TransportError::DimensionMismatch(
            "cost dimensions do not match atom counts".to_string(),
        ));
    }
    let m = mu.len();
    let n = nu.len();
    let uniform = m == n
        && mu
            .weights()
            .iter()
            .chain(nu.weights())
            .all(|&w| (w - 1.0 / m as f64).abs() < 1e-12);
    if uniform && m <= 6 {
        let mut perm: Vec<usize> = (0..n).collect();
        let mut best = f64::INFINITY;
        permute(&mut perm, 0, &mut |p| {
            let total: f64 = p.iter().enumerate().map(|(i, &j)| cost.get(i, j)).sum();
            best = best.min(total / m as f64);
        });
        return Ok(best);
    }
    if m <= 4 && n <= 4 {
        return vertex_enumeration(mu.weights(), nu.weights(), cost);
    }
    Err(TransportError::TooLarge(format!(
        "{m}x{n} atoms exceed the brute-force limits"
    )))
}

fn permute(perm: &mut Vec<usize>, k: usize, visit: &mut impl FnMut(&[usize])) {
    if k == perm.len() {
        visit(perm);
        return;
    }
    for i in k..perm.len() {
        perm.swap(k, i);
        permute(perm, k + 1, visit);
        perm.swap(k, i);
    }
}

/// Minimum over all spanning-tree bases of the bipartite transportation
/// graph whose tree flows are nonnegative.
fn vertex_enumeration(
    supply: &[f64],
    demand: &[f64],
    cost: &CostMatrix,
) -> Result<f64, TransportError> {
    let m = supply.len();
    let n = demand.len();
    let arcs: Vec<(usize, usize)> = (0..m)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .collect();
    let want = m + n - 1;
    let mut best = f64::INFINITY;
    let mut chosen = Vec::with_capacity(want);
    enumerate_subsets(&arcs, want, &mut chosen, 0, &mut |subset| {
        if let Some(value) = tree_vertex_value(subset, supply, demand, cost) {
            best = best.min(value);
        }
    });
    if best.is_infinite() {
        return Err(TransportError::Unbalanced(
            (supply.iter().sum::<f64>() - demand.iter().sum::<f64>()).abs(),
        ));
    }
    Ok(best)
}

fn enumerate_subsets<'a>(
    arcs: &'a [(usize, usize)],
    want: usize,
    chosen: &mut Vec<&'a (usize, usize)>,
    from: usize,
    visit: &mut impl FnMut(&[&(usize, usize)]),
) {
    if chosen.len() == want {
        visit(chosen);
        return;
    }
    let missing = want - chosen.len();
    for idx in from..arcs.len() {
        if arcs.len() - idx < missing {
            break;
        }
        chosen.push(&arcs[idx]);
        enumerate_subsets(arcs, want, chosen, idx + 1, visit);
        chosen.pop();
    }
}

fn find_root(parent: &mut [usize], x: usize) -> usize {
    let mut root = x;
    while parent[root] != root {
        root = parent[root];
    }
    let mut cur = x;
    while parent[cur] != root {
        let next = parent[cur];
        parent[cur] = root;
        cur = next;
    }
    root
}

/// Value of the basic solution for a candidate spanning tree, or `None`
/// if the arcs do not form a tree or the flows go negative.
fn tree_vertex_value(
    subset: &[&(usize, usize)],
    supply: &[f64],
    demand: &[f64],
    cost: &CostMatrix,
) -> Option<f64> {
    let m = supply.len();
    let n = demand.len();
    let total = m + n;
    let mut parent: Vec<usize> = (0..total).collect();
    for &&(i, j) in subset {
        let (ri, rj) = (find_root(&mut parent, i), find_root(&mut parent, m + j));
        if ri == rj {
            return None;
        }
        parent[ri] = rj;
    }
    // connected + (m+n-1) arcs => spanning tree; solve by leaf elimination
    let mut residual: Vec<f64> = supply
        .iter()
        .copied()
        .chain(demand.iter().copied())
        .collect();
    let mut adj = vec![Vec::new(); total];
    for (idx, &&(i, j)) in subset.iter().enumerate() {
        adj[i].push(idx);
        adj[m + j].push(idx);
    }
    let mut degree: Vec<usize> = adj.iter().map(Vec::len).collect();
    let mut done = vec![false; subset.len()];
    let mut value = 0.0;
    let mut leaves: Vec<usize> = (0..total).filter(|&v| degree[v] == 1).collect();
    let mut processed = 0;
    while let Some(leaf) = leaves.pop() {
        let Some(&arc) = adj[leaf].iter().find(|&&a| !done[a]) else {
            continue;
        };
        let &(i, j) = subset[arc];
        let f = residual[leaf];
        if f < -1e-12 {
            return None;
        }
        value += cost.get(i, j) * f.max(0.0);
        done[arc] = true;
        processed += 1;
        let other = if leaf < m { m + j } else { i };
        residual[other] -= f;
        residual[leaf] = 0.0;
        degree[leaf] -= 1;
        degree[other] -= 1;
        if degree[other] == 1 {
            leaves.push(other);
        }
    }
    (processed == subset.len()).then_some(value)
}

/// p-Wasserstein distance between discrete measures.
pub fn wasserstein_p(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    p: f64,
) -> Result<f64, TransportError> {
    assert!(p >= 1.0, "wasserstein_p requires p >= 1");
    if mu.dim() != nu.dim() {
        return Err(TransportError::DimensionMismatch(format!(
            "measures live in dimensions {} and {}",
            mu.dim(),
            nu.dim()
        )));
    }
    let cost = CostMatrix::euclidean_power(mu.atoms(), nu.atoms(), p)?;
    let sol = solve_kantorovich(mu, nu, &cost)?;
    Ok(sol.value.max(0.0).powf(1.0 / p))
}

/// Minimum-energy transport cost between atom sets:
/// `c(i,j) = 1/2 (z_j - Phi(t1,t0) z_i)^T W(t1,t0)^{-1} (z_j - Phi(t1,t0) z_i)`.
pub fn lqr_cost_matrix(
    sys: &LinearSystem,
    t0: f64,
    t1: f64,
    source_atoms: &[Vec<f64>],
    target_atoms: &[Vec<f64>],
) -> Result<CostMatrix, TransportError> {
    let phi = lti::state_transition(sys, t1, t0)?;
    let w = lti::controllability_gramian(sys, t1, t0)?;
    let winv = lti::gramian_inverse(&w)?;
    let mut c = Matrix::zeros(source_atoms.len(), target_atoms.len());
    for (i, zi) in source_atoms.iter().enumerate() {
        let moved = phi.matvec(zi);
        for (j, zj) in target_atoms.iter().enumerate() {
            let d = sub_vec(zj, &moved);
            c.set(i, j, (0.5 * winv.quad_form(&d, &d)).max(0.0));
        }
    }
    CostMatrix::new(c)
}

/// Squared 2-Wasserstein distance between the Gramian-transformed
/// measures: `mu0` pushed forward by `W^{-1/2} Phi` and `mu1` by
/// `W^{-1/2}`, with `Phi = Phi(t1,t0)` and `W = W(t1,t0)`.
///
/// Equals twice the Kantorovich optimum under [`lqr_cost_matrix`].
pub fn transformed_w2(
    sys: &LinearSystem,
    mu0: &DiscreteMeasure,
    mu1: &DiscreteMeasure,
    t0: f64,
    t1: f64,
) -> Result<f64, TransportError> {
    let phi = lti::state_transition(sys, t1, t0)?;
    let w = lti::controllability_gramian(sys, t1, t0)?;
    // enforce the controllability policy before taking the root
    lti::gramian_inverse(&w)?;
    let w_inv_sqrt = psd_inv_sqrt(&w)?;
    let hat0 = crate::measures::pushforward_linear(mu0, &w_inv_sqrt.matmul(&phi))?;
    let hat1 = crate::measures::pushforward_linear(mu1, &w_inv_sqrt)?;
    let cost = CostMatrix::euclidean_power(hat0.atoms(), hat1.atoms(), 2.0)?;
    let sol = solve_kantorovich(&hat0, &hat1, &cost)?;
    Ok(sol.value.max(0.0))
}
