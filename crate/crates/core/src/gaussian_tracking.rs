//! Closed-form Gaussian tracking: the differential Riccati flow behind
//! Gaussian displacement interpolation, and two-stage inference of state
//! marginals from Gaussian output marginals.
//!
//! For endpoint Gaussians `N(v0, S0)`, `N(v1, S1)` the optimal ensemble
//! follows the closed-loop dynamics `A - B B^T K(t)` plus a mean drive:
//! `K` solves `K' = -A^T K - K A + K B B^T K` from the initial condition
//!
//! ```text
//! K(0) = S0^{-1/2} [ S0^{1/2} W^{-1} S0^{1/2}
//!        - (S0^{1/2} W^{-1} Phi S1 Phi^T W^{-1} S0^{1/2})^{1/2} ] S0^{-1/2}
//! ```
//!
//! with `W = W(t0,t1)`, `Phi = Phi(t0,t1)`. The interpolant is then
//! `v_t = H(t) v0 + ∫ H-propagated mean drive` and `S_t = H(t) S0 H(t)^T`
//! where `H(t)` is the closed-loop transition matrix, and the mean drive
//! is `m(t) = G(t)^T What^{-1} (G(t1) v1 - v0)` with `G(t)` the inverse
//! closed-loop transition and `What` its controllability Gramian.

use crate::lti::{self, LinearSystem, LtiError};
use crate::measures::{GaussianMeasure, MeasureError};
use crate::numerics::{
    add_vec, jacobi_eigh, psd_inv_sqrt, psd_sqrt, sub_vec, Matrix, NumericsError,
};
use crate::transport::TransportError;
use thiserror::Error;

/// Riccati iterates above this norm abort the solve.
const RICCATI_BLOWUP: f64 = 1e12;

/// Coordinate-descent convergence: objective improvement per full sweep.
const DESCENT_TOL: f64 = 1e-9;

/// Coordinate-descent sweep cap.
const MAX_SWEEPS: usize = 10_000;

/// Lower bound kept on the free Cholesky diagonal during descent.
const DIAG_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Error)]
pub enum GaussianTrackingError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Lti(#[from] LtiError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("endpoint covariance must be positive definite (eigenvalue {0:.3e})")]
    NotPositiveDefinite(f64),
    #[error("Riccati iterate blew up (norm {0:.3e})")]
    BlowUp(f64),
    #[error("covariance descent did not converge within {0} sweeps")]
    NoConvergence(usize),
    #[error("output map is rank-deficient: {0}")]
    InfeasibleConstraint(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

fn require_pd(s: &Matrix) -> Result<(), GaussianTrackingError> {
    let (eigs, _) = jacobi_eigh(s)?;
    let hi = eigs.last().copied().unwrap_or(0.0);
    if hi <= 0.0 || eigs[0] <= 1e-12 * hi {
        return Err(GaussianTrackingError::NotPositiveDefinite(eigs[0]));
    }
    Ok(())
}

/// The Riccati gain on its integration grid.
#[derive(Debug, Clone)]
pub struct RiccatiSolution {
    times: Vec<f64>,
    gains: Vec<Matrix>,
}

impl RiccatiSolution {
    pub fn initial(&self) -> &Matrix {
        &self.gains[0]
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Gain at `t`, linearly interpolated between grid nodes.
    pub fn at(&self, t: f64) -> Matrix {
        interp_matrix(&self.times, &self.gains, t)
    }

    /// Largest asymmetry across all stored gains.
    pub fn max_asymmetry(&self) -> f64 {
        self.gains.iter().fold(0.0f64, |m, k| m.max(k.asymmetry()))
    }
}

fn interp_matrix(times: &[f64], mats: &[Matrix], t: f64) -> Matrix {
    if t <= times[0] {
        return mats[0].clone();
    }
    if t >= *times.last().unwrap() {
        return mats.last().unwrap().clone();
    }
    let idx = match times.binary_search_by(|v| v.partial_cmp(&t).unwrap()) {
        Ok(i) => return mats[i].clone(),
        Err(i) => i,
    };
    let alpha = (t - times[idx - 1]) / (times[idx] - times[idx - 1]);
    Matrix::from_fn(mats[0].rows(), mats[0].cols(), |i, j| {
        (1.0 - alpha) * mats[idx - 1].get(i, j) + alpha * mats[idx].get(i, j)
    })
}

fn interp_vec(times: &[f64], vecs: &[Vec<f64>], t: f64) -> Vec<f64> {
    if t <= times[0] {
        return vecs[0].clone();
    }
    if t >= *times.last().unwrap() {
        return vecs.last().unwrap().clone();
    }
    let idx = match times.binary_search_by(|v| v.partial_cmp(&t).unwrap()) {
        Ok(i) => return vecs[i].clone(),
        Err(i) => i,
    };
    let alpha = (t - times[idx - 1]) / (times[idx] - times[idx - 1]);
    vecs[idx - 1]
        .iter()
        .zip(&vecs[idx])
        .map(|(a, b)| a + alpha * (b - a))
        .collect()
}

/// Riccati initial gain for steering `N(.,s0)` to `N(.,s1)` over `[t0,t1]`.
fn riccati_initial_gain(
    sys: &LinearSystem,
    s0: &Matrix,
    s1: &Matrix,
    t0: f64,
    t1: f64,
) -> Result<Matrix, GaussianTrackingError> {
    let w = lti::controllability_gramian(sys, t0, t1)?;
    let winv = lti::gramian_inverse(&w)?;
    let phi = lti::state_transition(sys, t0, t1)?;
    let s0_half = psd_sqrt(s0)?;
    let s0_inv_half = psd_inv_sqrt(s0)?;
    let first = s0_half.matmul(&winv).matmul(&s0_half);
    let pulled = phi.matmul(s1).matmul(&phi.transpose());
    let inner = s0_half
        .matmul(&winv)
        .matmul(&pulled)
        .matmul(&winv)
        .matmul(&s0_half);
    let inner_root = psd_sqrt(&inner.symmetrized())?;
    let k0 = s0_inv_half
        .matmul(&first.sub(&inner_root))
        .matmul(&s0_inv_half);
    Ok(k0.symmetrized())
}

/// Solves the covariance-steering Riccati equation
/// `K' = -A^T K - K A + K B B^T K` over `[t0, t1]`, symmetrizing each
/// step, from the closed-form initial gain.
pub fn riccati_solve(
    sys: &LinearSystem,
    s0: &Matrix,
    s1: &Matrix,
    t0: f64,
    t1: f64,
) -> Result<RiccatiSolution, GaussianTrackingError> {
    let n = sys.state_dim();
    if s0.rows() != n || s1.rows() != n || !s0.is_square() || !s1.is_square() {
        return Err(GaussianTrackingError::DimensionMismatch(format!(
            "covariances must be {n}x{n}"
        )));
    }
    require_pd(s0)?;
    require_pd(s1)?;
    let k0 = riccati_initial_gain(sys, s0, s1, t0, t1)?;
    let steps = sys.steps_for(t1 - t0);
    let h = (t1 - t0) / steps as f64;
    let mut times = Vec::with_capacity(steps + 1);
    let mut gains = Vec::with_capacity(steps + 1);
    times.push(t0);
    gains.push(k0.clone());
    let mut k = k0;
    for step in 0..steps {
        let t = t0 + step as f64 * h;
        let f = |t: f64, k: &Matrix| -> Matrix {
            let a = sys.a_at(t);
            let b = sys.b_at(t);
            let bbt = b.matmul(&b.transpose());
            a.transpose()
                .matmul(k)
                .scaled(-1.0)
                .sub(&k.matmul(a))
                .add(&k.matmul(&bbt).matmul(k))
        };
        let k1 = f(t, &k);
        let k2 = f(t + 0.5 * h, &k.add(&k1.scaled(0.5 * h)));
        let k3 = f(t + 0.5 * h, &k.add(&k2.scaled(0.5 * h)));
        let k4 = f(t + h, &k.add(&k3.scaled(h)));
        k = k
            .add(&k1.add(&k4).add(&k2.add(&k3).scaled(2.0)).scaled(h / 6.0))
            .symmetrized();
        let norm = k.frobenius_norm();
        if !norm.is_finite() || norm > RICCATI_BLOWUP {
            return Err(GaussianTrackingError::BlowUp(norm));
        }
        times.push(t0 + (step + 1) as f64 * h);
        gains.push(k.clone());
    }
    Ok(RiccatiSolution { times, gains })
}

/// The Gaussian displacement interpolant between two endpoint Gaussians.
///
/// Evaluation reproduces the endpoints at the span boundaries and stays
/// PSD in between: covariances are congruences of `S0` by the stored
/// closed-loop transition.
#[derive(Debug, Clone)]
pub struct GaussianInterpolant {
    span: (f64, f64),
    riccati: RiccatiSolution,
    times: Vec<f64>,
    /// closed-loop transition H(t) = Phi_hat(t, t0)
    h_mats: Vec<Matrix>,
    means: Vec<Vec<f64>>,
    s0: Matrix,
}

impl GaussianInterpolant {
    pub fn span(&self) -> (f64, f64) {
        self.span
    }

    pub fn riccati(&self) -> &RiccatiSolution {
        &self.riccati
    }

    /// Mean and covariance at `t`, clamped to the span.
    pub fn mean_cov(&self, t: f64) -> (Vec<f64>, Matrix) {
        let mean = interp_vec(&self.times, &self.means, t);
        let h = interp_matrix(&self.times, &self.h_mats, t);
        let cov = h.matmul(&self.s0).matmul(&h.transpose()).symmetrized();
        (mean, cov)
    }

    pub fn at(&self, t: f64) -> Result<GaussianMeasure, MeasureError> {
        let (mean, cov) = self.mean_cov(t);
        GaussianMeasure::new(mean, crate::numerics::psd_project(&cov)?)
    }
}

/// Builds the displacement interpolant for `N(v0,S0) -> N(v1,S1)` over
/// `[t0, t1]` under the system's minimum-energy transport.
pub fn gaussian_interpolant(
    sys: &LinearSystem,
    g0: &GaussianMeasure,
    g1: &GaussianMeasure,
    t0: f64,
    t1: f64,
) -> Result<GaussianInterpolant, GaussianTrackingError> {
    let n = sys.state_dim();
    if g0.dim() != n || g1.dim() != n {
        return Err(GaussianTrackingError::DimensionMismatch(format!(
            "endpoint Gaussians must have dimension {n}"
        )));
    }
    let riccati = riccati_solve(sys, g0.covariance(), g1.covariance(), t0, t1)?;
    let steps = riccati.times.len() - 1;
    let h_step = (t1 - t0) / steps as f64;

    // Joint pass: K (again, for stage-exact closed-loop coefficients),
    // H(t) = Phi_hat(t,t0), G(t) = Phi_hat(t0,t), and the running Gramian
    // What(t0,t) of the closed-loop pair.
    let idx = |block: usize| block * n * n;
    let unpack = |state: &[f64], block: usize| {
        Matrix::from_fn(n, n, |i, j| state[idx(block) + i * n + j])
    };
    let pack = |mats: [&Matrix; 4]| -> Vec<f64> {
        let mut out = Vec::with_capacity(4 * n * n);
        for m in mats {
            out.extend_from_slice(m.data());
        }
        out
    };
    let eye = Matrix::identity(n);
    let zero = Matrix::zeros(n, n);
    let mut state = pack([riccati.initial(), &eye, &eye, &zero]);
    let mut h_mats = Vec::with_capacity(steps + 1);
    let mut g_mats = Vec::with_capacity(steps + 1);
    h_mats.push(eye.clone());
    g_mats.push(eye.clone());
    let rhs = |t: f64, state: &[f64]| -> Vec<f64> {
        let k = unpack(state, 0);
        let h = unpack(state, 1);
        let g = unpack(state, 2);
        let a = sys.a_at(t);
        let b = sys.b_at(t);
        let bbt = b.matmul(&b.transpose());
        let a_cl = a.sub(&bbt.matmul(&k));
        let dk = a
            .transpose()
            .matmul(&k)
            .scaled(-1.0)
            .sub(&k.matmul(a))
            .add(&k.matmul(&bbt).matmul(&k));
        let dh = a_cl.matmul(&h);
        let dg = g.matmul(&a_cl).scaled(-1.0);
        let dw = g.matmul(&bbt).matmul(&g.transpose());
        pack([&dk, &dh, &dg, &dw])
    };
    for step in 0..steps {
        let t = t0 + step as f64 * h_step;
        state = rk4_step(&rhs, t, h_step, &state);
        // keep the gain symmetric, as in riccati_solve
        let k = unpack(&state, 0).symmetrized();
        state[..n * n].copy_from_slice(k.data());
        if state.iter().any(|v| !v.is_finite()) {
            return Err(GaussianTrackingError::BlowUp(f64::INFINITY));
        }
        h_mats.push(unpack(&state, 1));
        g_mats.push(unpack(&state, 2));
    }
    let what = unpack(&state, 3).symmetrized();
    let what_inv = lti::gramian_inverse(&what)?;
    let g_end = g_mats.last().expect("nonempty grid");
    let drive = what_inv.matvec(&sub_vec(&g_end.matvec(g1.mean()), g0.mean()));

    // Second pass: the mean rides the closed loop with input B B^T m(t),
    // m(t) = G(t)^T drive; K and G are re-integrated jointly so every RK4
    // stage sees consistent coefficients.
    let mut state2: Vec<f64> = riccati
        .initial()
        .data()
        .iter()
        .copied()
        .chain(eye.data().iter().copied())
        .chain(g0.mean().iter().copied())
        .collect();
    let mut means = Vec::with_capacity(steps + 1);
    means.push(g0.mean().to_vec());
    let rhs2 = |t: f64, state: &[f64]| -> Vec<f64> {
        let k = Matrix::from_fn(n, n, |i, j| state[i * n + j]);
        let g = Matrix::from_fn(n, n, |i, j| state[n * n + i * n + j]);
        let nu = &state[2 * n * n..];
        let a = sys.a_at(t);
        let b = sys.b_at(t);
        let bbt = b.matmul(&b.transpose());
        let a_cl = a.sub(&bbt.matmul(&k));
        let dk = a
            .transpose()
            .matmul(&k)
            .scaled(-1.0)
            .sub(&k.matmul(a))
            .add(&k.matmul(&bbt).matmul(&k));
        let dg = g.matmul(&a_cl).scaled(-1.0);
        let m_t = g.transpose().matvec(&drive);
        let dnu = add_vec(&a_cl.matvec(nu), &bbt.matvec(&m_t));
        let mut out = dk.data().to_vec();
        out.extend_from_slice(dg.data());
        out.extend_from_slice(&dnu);
        out
    };
    for step in 0..steps {
        let t = t0 + step as f64 * h_step;
        state2 = rk4_step(&rhs2, t, h_step, &state2);
        let k = Matrix::from_fn(n, n, |i, j| state2[i * n + j]).symmetrized();
        state2[..n * n].copy_from_slice(k.data());
        means.push(state2[2 * n * n..].to_vec());
    }

    Ok(GaussianInterpolant {
        span: (t0, t1),
        times: riccati.times.clone(),
        riccati,
        h_mats,
        means,
        s0: g0.covariance().clone(),
    })
}

fn rk4_step(rhs: &impl Fn(f64, &[f64]) -> Vec<f64>, t: f64, h: f64, state: &[f64]) -> Vec<f64> {
    let n = state.len();
    let k1 = rhs(t, state);
    let mut tmp: Vec<f64> = (0..n).map(|i| state[i] + 0.5 * h * k1[i]).collect();
    let k2 = rhs(t + 0.5 * h, &tmp);
    for i in 0..n {
        tmp[i] = state[i] + 0.5 * h * k2[i];
    }
    let k3 = rhs(t + 0.5 * h, &tmp);
    for i in 0..n {
        tmp[i] = state[i] + h * k3[i];
    }
    let k4 = rhs(t + h, &tmp);
    (0..n)
        .map(|i| state[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect()
}

/// Stage one of the two-stage inference: state means from output means.
///
/// Minimizes the summed interval transport cost
/// `sum_k 1/2 (v_{k+1} - Phi_k v_k)^T W_k^{-1} (v_{k+1} - Phi_k v_k)`
/// subject to `C(k) v_k = output_means[k]`, via one KKT solve over the
/// stacked block system.
pub fn infer_state_means(
    sys: &LinearSystem,
    output_means: &[Vec<f64>],
) -> Result<Vec<Vec<f64>>, GaussianTrackingError> {
    let n = sys.state_dim();
    let p = sys.output_dim();
    let horizon = output_means.len();
    if horizon < 2 {
        return Err(GaussianTrackingError::DimensionMismatch(
            "need output means at two or more times".to_string(),
        ));
    }
    if output_means.iter().any(|m| m.len() != p) {
        return Err(GaussianTrackingError::DimensionMismatch(format!(
            "output means must have dimension {p}"
        )));
    }
    let dim = n * horizon;
    let mut q = Matrix::zeros(dim, dim);
    for k in 0..horizon - 1 {
        let (ta, tb) = (k as f64, (k + 1) as f64);
        let phi = lti::state_transition(sys, tb, ta)?;
        let w = lti::controllability_gramian(sys, tb, ta)?;
        let winv = lti::gramian_inverse(&w)?;
        let pw = phi.transpose().matmul(&winv);
        let pwp = pw.matmul(&phi);
        for i in 0..n {
            for j in 0..n {
                let (r0, c0) = (k * n, k * n);
                q.set(r0 + i, c0 + j, q.get(r0 + i, c0 + j) + pwp.get(i, j));
                let (r1, c1) = ((k + 1) * n, (k + 1) * n);
                q.set(r1 + i, c1 + j, q.get(r1 + i, c1 + j) + winv.get(i, j));
                q.set(k * n + i, (k + 1) * n + j, q.get(k * n + i, (k + 1) * n + j) - pw.get(i, j));
                q.set((k + 1) * n + i, k * n + j, q.get((k + 1) * n + i, k * n + j) - pw.get(j, i));
            }
        }
    }
    let mut a_eq = Matrix::zeros(p * horizon, dim);
    let mut b_eq = Vec::with_capacity(p * horizon);
    for (k, target) in output_means.iter().enumerate() {
        let c = sys.c_at(k as f64);
        let rank = crate::numerics::row_echelon_rank(c, lti::RANK_REL_TOL).rank;
        if rank < p {
            return Err(GaussianTrackingError::InfeasibleConstraint(format!(
                "C({k}) has rank {rank} < {p}"
            )));
        }
        for i in 0..p {
            for j in 0..n {
                a_eq.set(k * p + i, k * n + j, c.get(i, j));
            }
        }
        b_eq.extend_from_slice(target);
    }
    let x = crate::numerics::solve_equality_qp(&q, &vec![0.0; dim], &a_eq, &b_eq)?;
    Ok(x.chunks(n).map(<[f64]>::to_vec).collect())
}

/// Bures-type squared transport cost between two PSD matrices:
/// `tr X + tr Y - 2 tr (X^{1/2} Y X^{1/2})^{1/2}`.
pub fn bures_cost(x: &Matrix, y: &Matrix) -> Result<f64, NumericsError> {
    let xr = psd_sqrt(&x.symmetrized())?;
    let inner = xr.matmul(y).matmul(&xr).symmetrized();
    let cross = psd_sqrt(&inner)?;
    Ok((x.trace() + y.trace() - 2.0 * cross.trace()).max(0.0))
}

/// Output-aligned coordinates: an invertible `T` with `C T = [I_p, 0]`.
fn output_aligned_basis(c: &Matrix) -> Result<Matrix, GaussianTrackingError> {
    let p = c.rows();
    let n = c.cols();
    let info = crate::numerics::row_echelon_rank(c, lti::RANK_REL_TOL);
    if info.rank < p {
        return Err(GaussianTrackingError::InfeasibleConstraint(format!(
            "output map has rank {} < {}",
            info.rank, p
        )));
    }
    // pseudo-inverse block: C^+ = C^T (C C^T)^{-1}
    let gram = c.matmul(&c.transpose());
    let ginv = gram
        .inverse()
        .map_err(GaussianTrackingError::Numerics)?;
    let cplus = c.transpose().matmul(&ginv);
    // kernel block, Gram-Schmidt orthonormalized
    let mut kernel: Vec<Vec<f64>> = Vec::with_capacity(n - p);
    for raw in info.kernel_basis {
        let mut v = raw;
        for prev in &kernel {
            let proj = crate::numerics::dot(&v, prev);
            for (vi, pi) in v.iter_mut().zip(prev) {
                *vi -= proj * pi;
            }
        }
        let nrm = crate::numerics::norm(&v);
        if nrm > 1e-12 {
            kernel.push(v.iter().map(|x| x / nrm).collect());
        }
    }
    if kernel.len() != n - p {
        return Err(GaussianTrackingError::InfeasibleConstraint(
            "kernel basis construction failed".to_string(),
        ));
    }
    Ok(Matrix::from_fn(n, n, |i, j| {
        if j < p {
            cplus.get(i, j)
        } else {
            kernel[j - p][i]
        }
    }))
}

/// Per-time free parameters of the constrained covariance factor.
struct CovBlock {
    basis: Matrix,   // T_k with C T_k = [I, 0]
    fixed: Matrix,   // L11 = S_k^{1/2} (p x p)
    l21: Matrix,     // (n-p) x p, free
    l22: Matrix,     // (n-p) x (n-p) lower triangular, free
}

impl CovBlock {
    fn covariance(&self) -> Matrix {
        let p = self.fixed.rows();
        let q = self.l21.rows();
        let n = p + q;
        let l = Matrix::from_fn(n, n, |i, j| {
            if i < p {
                if j < p {
                    self.fixed.get(i, j)
                } else {
                    0.0
                }
            } else if j < p {
                self.l21.get(i - p, j)
            } else if j <= i {
                self.l22.get(i - p, j - p)
            } else {
                0.0
            }
        });
        let inner = l.matmul(&l.transpose());
        self.basis
            .matmul(&inner)
            .matmul(&self.basis.transpose())
            .symmetrized()
    }

    fn param_count(&self) -> usize {
        let p = self.fixed.rows();
        let q = self.l21.rows();
        q * p + q * (q + 1) / 2
    }

    fn get_param(&self, idx: usize) -> f64 {
        let p = self.fixed.rows();
        let q = self.l21.rows();
        if idx < q * p {
            self.l21.get(idx / p, idx % p)
        } else {
            let mut rem = idx - q * p;
            for i in 0..q {
                if rem <= i {
                    return self.l22.get(i, rem);
                }
                rem -= i + 1;
            }
            unreachable!()
        }
    }

    fn set_param(&mut self, idx: usize, value: f64) {
        let p = self.fixed.rows();
        let q = self.l21.rows();
        if idx < q * p {
            self.l21.set(idx / p, idx % p, value);
        } else {
            let mut rem = idx - q * p;
            for i in 0..q {
                if rem <= i {
                    // diagonal entries stay positive (projection step)
                    let v = if rem == i { value.max(DIAG_FLOOR) } else { value };
                    self.l22.set(i, rem, v);
                    return;
                }
                rem -= i + 1;
            }
            unreachable!()
        }
    }
}

/// Result of the covariance inference stage.
#[derive(Debug, Clone)]
pub struct CovarianceInference {
    pub covariances: Vec<Matrix>,
    /// Total Bures cost between consecutive transformed covariances;
    /// equal to the squared transformed Wasserstein distance summed over
    /// intervals (twice the quadratic control cost).
    pub objective: f64,
}

/// Stage two of the two-stage inference: state covariances from output
/// covariances, by projected coordinate descent on constrained factor
/// parameters. The constraint `C(k) S_k C(k)^T = output_covs[k]` is
/// eliminated through an output-aligned factor parameterization.
pub fn infer_state_covariances(
    sys: &LinearSystem,
    output_covs: &[Matrix],
) -> Result<CovarianceInference, GaussianTrackingError> {
    let n = sys.state_dim();
    let p = sys.output_dim();
    let horizon = output_covs.len();
    if horizon < 2 {
        return Err(GaussianTrackingError::DimensionMismatch(
            "need output covariances at two or more times".to_string(),
        ));
    }
    for s in output_covs {
        if s.rows() != p || s.cols() != p {
            return Err(GaussianTrackingError::DimensionMismatch(format!(
                "output covariances must be {p}x{p}"
            )));
        }
        require_pd(s)?;
    }
    // Transformed-coordinate maps per interval: X -> W^{-1/2} Phi X and
    // X -> W^{-1/2} X.
    let mut maps = Vec::with_capacity(horizon - 1);
    for k in 0..horizon - 1 {
        let (ta, tb) = (k as f64, (k + 1) as f64);
        let phi = lti::state_transition(sys, tb, ta)?;
        let w = lti::controllability_gramian(sys, tb, ta)?;
        lti::gramian_inverse(&w)?;
        let w_inv_half = psd_inv_sqrt(&w)?;
        maps.push((w_inv_half.matmul(&phi), w_inv_half));
    }
    // scale-aware initialization of the hidden blocks
    let scale = (output_covs
        .iter()
        .map(|s| s.trace() / p as f64)
        .sum::<f64>()
        / horizon as f64)
        .sqrt()
        .max(DIAG_FLOOR);
    let mut blocks = Vec::with_capacity(horizon);
    for (k, s) in output_covs.iter().enumerate() {
        let c = sys.c_at(k as f64);
        let basis = output_aligned_basis(c)?;
        blocks.push(CovBlock {
            basis,
            fixed: psd_sqrt(s)?,
            l21: Matrix::zeros(n - p, p),
            l22: Matrix::identity(n - p).scaled(scale),
        });
    }
    if n == p {
        // fully observed: constraints pin every covariance
        let covariances: Vec<Matrix> = blocks.iter().map(CovBlock::covariance).collect();
        let objective = total_cost(&covariances, &maps)?;
        return Ok(CovarianceInference {
            covariances,
            objective,
        });
    }

    let interval_cost = |covs: &[Matrix], k: usize| -> Result<f64, GaussianTrackingError> {
        let (ref a_map, ref b_map) = maps[k];
        let x = a_map.matmul(&covs[k]).matmul(&a_map.transpose());
        let y = b_map.matmul(&covs[k + 1]).matmul(&b_map.transpose());
        Ok(bures_cost(&x, &y)?)
    };
    let mut covs: Vec<Matrix> = blocks.iter().map(CovBlock::covariance).collect();
    let mut costs: Vec<f64> = (0..horizon - 1)
        .map(|k| interval_cost(&covs, k))
        .collect::<Result<_, _>>()?;
    let mut objective: f64 = costs.iter().sum();
    let mut step_sizes: Vec<Vec<f64>> = blocks
        .iter()
        .map(|b| vec![0.25 * scale; b.param_count()])
        .collect();

    let mut converged = false;
    for _sweep in 0..MAX_SWEEPS {
        let before = objective;
        for k in 0..horizon {
            for idx in 0..blocks[k].param_count() {
                let current = blocks[k].get_param(idx);
                let delta = step_sizes[k][idx];
                let mut best = (objective, current);
                for candidate in [current + delta, current - delta] {
                    blocks[k].set_param(idx, candidate);
                    let trial_cov = blocks[k].covariance();
                    let old_cov = std::mem::replace(&mut covs[k], trial_cov);
                    let mut trial_obj = objective;
                    let mut trial_costs = Vec::new();
                    let mut ok = true;
                    for adj in affected_intervals(k, horizon) {
                        match interval_cost(&covs, adj) {
                            Ok(c) => {
                                trial_obj += c - costs[adj];
                                trial_costs.push((adj, c));
                            }
                            Err(_) => {
                                ok = false;
                                break;
                            }
                        }
                    }
                    if ok && trial_obj < best.0 - 1e-15 {
                        best = (trial_obj, blocks[k].get_param(idx));
                        for (adj, c) in &trial_costs {
                            costs[*adj] = *c;
                        }
                        objective = trial_obj;
                        continue; // keep the improved covariance in place
                    }
                    covs[k] = old_cov;
                }
                blocks[k].set_param(idx, best.1);
                covs[k] = blocks[k].covariance();
                // adapt the coordinate step
                if best.1 != current {
                    step_sizes[k][idx] *= 2.0;
                } else {
                    step_sizes[k][idx] *= 0.5;
                }
                step_sizes[k][idx] = step_sizes[k][idx].clamp(1e-10, 10.0 * scale + 10.0);
            }
        }
        if before - objective < DESCENT_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(GaussianTrackingError::NoConvergence(MAX_SWEEPS));
    }
    // final costs from scratch, guarding against drift in the cache
    let covariances: Vec<Matrix> = blocks.iter().map(CovBlock::covariance).collect();
    let objective = total_cost(&covariances, &maps)?;
    Ok(CovarianceInference {
        covariances,
        objective,
    })
}

fn affected_intervals(k: usize, horizon: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(2);
    if k > 0 {
        out.push(k - 1);
    }
    if k + 1 < horizon {
        out.push(k);
    }
    out
}

fn total_cost(
    covs: &[Matrix],
    maps: &[(Matrix, Matrix)],
) -> Result<f64, GaussianTrackingError> {
    let mut total = 0.0;
    for (k, (a_map, b_map)) in maps.iter().enumerate() {
        let x = a_map.matmul(&covs[k]).matmul(&a_map.transpose());
        let y = b_map.matmul(&covs[k + 1]).matmul(&b_map.transpose());
        total += bures_cost(&x, &y)?;
    }
    Ok(total)
}

/// Full Gaussian tracking solution: inferred state marginals at the
/// observation times, per-interval interpolants, and a uniform sampling.
#[derive(Debug)]
pub struct GaussianTrackingSolution {
    pub state_marginals: Vec<GaussianMeasure>,
    pub interpolants: Vec<GaussianInterpolant>,
    pub sample_times: Vec<f64>,
    pub samples: Vec<(Vec<f64>, Matrix)>,
    pub covariance_objective: f64,
}

impl GaussianTrackingSolution {
    /// Mean and covariance at any `t` in `[0, T]`.
    pub fn mean_cov(&self, t: f64) -> (Vec<f64>, Matrix) {
        let last = self.interpolants.len() - 1;
        let k = (t.floor() as usize).min(last);
        self.interpolants[k].mean_cov(t)
    }
}

/// Runs the two-stage inference and builds per-interval interpolants,
/// sampled on a uniform grid with `samples_per_interval` cells per unit.
pub fn track_gaussian(
    sys: &LinearSystem,
    outputs: &[GaussianMeasure],
    samples_per_interval: usize,
) -> Result<GaussianTrackingSolution, GaussianTrackingError> {
    let p = sys.output_dim();
    if outputs.len() < 2 {
        return Err(GaussianTrackingError::DimensionMismatch(
            "need Gaussian outputs at two or more times".to_string(),
        ));
    }
    if outputs.iter().any(|g| g.dim() != p) {
        return Err(GaussianTrackingError::DimensionMismatch(format!(
            "outputs must have dimension {p}"
        )));
    }
    let means: Vec<Vec<f64>> = outputs.iter().map(|g| g.mean().to_vec()).collect();
    let covs: Vec<Matrix> = outputs.iter().map(|g| g.covariance().clone()).collect();
    let state_means = infer_state_means(sys, &means)?;
    let inference = infer_state_covariances(sys, &covs)?;
    let marginals: Vec<GaussianMeasure> = state_means
        .iter()
        .zip(&inference.covariances)
        .map(|(m, s)| GaussianMeasure::new(m.clone(), crate::numerics::psd_project(s)?))
        .collect::<Result<_, _>>()?;
    let mut interpolants = Vec::with_capacity(outputs.len() - 1);
    for k in 0..outputs.len() - 1 {
        interpolants.push(gaussian_interpolant(
            sys,
            &marginals[k],
            &marginals[k + 1],
            k as f64,
            (k + 1) as f64,
        )?);
    }
    let samples_per_interval = samples_per_interval.max(1);
    let mut sample_times = Vec::new();
    let mut samples = Vec::new();
    let horizon = outputs.len() - 1;
    for k in 0..horizon {
        let upto = if k + 1 == horizon {
            samples_per_interval + 1
        } else {
            samples_per_interval
        };
        for j in 0..upto {
            let t = k as f64 + j as f64 / samples_per_interval as f64;
            sample_times.push(t);
            samples.push(interpolants[k].mean_cov(t));
        }
    }
    Ok(GaussianTrackingSolution {
        state_marginals: marginals,
        interpolants,
        sample_times,
        samples,
        covariance_objective: inference.objective,
    })
}
