//! Linear time-varying system primitives: state-transition matrices,
//! controllability/observability Gramians, minimum-energy control, and the
//! classical observability rank test.
//!
//! Conventions. `Phi(t, t')` propagates states from time `t'` to time `t`
//! and works in either direction. Gramians are always integrated over
//! `[min(t, t'), max(t, t')]` with the evaluation point at the first
//! argument, so every Gramian returned here is symmetric PSD; with this
//! orientation the minimum energy between `(x0, t0)` and `(x1, t1)` is
//! `(x1 - Phi(t1,t0) x0)^T W(t1,t0)^{-1} (x1 - Phi(t1,t0) x0)`, which
//! agrees with the `(t0, t1)`-oriented form through the congruence
//! `W(t0,t1) = Phi(t0,t1) W(t1,t0) Phi(t0,t1)^T`.

use crate::numerics::{
    self, dot, integrate_ode, jacobi_eigh, row_echelon_rank, sub_vec, Matrix, NumericsError,
    OdeSolution,
};
use thiserror::Error;

/// Controllability is declared failed when the Gramian's smallest
/// eigenvalue falls below this fraction of the largest.
pub const CONTROLLABILITY_EIG_RATIO: f64 = 1e-12;

/// Relative pivot threshold for the observability rank test.
pub const RANK_REL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Error)]
pub enum LtiError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("system is not controllable over the requested interval (eigenvalue ratio {ratio:.3e})")]
    NotControllable { ratio: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("feedback law is undefined at t = {t} (outside [t0, t1))")]
    FeedbackOutsideHorizon { t: f64 },
}

/// A time-dependent matrix: either constant or a piecewise-constant table.
///
/// Table values take effect at their breakpoint (right limit): `values[i]`
/// applies on `[times[i], times[i+1])`, the first value before `times[0]`,
/// and the last value from the final breakpoint on.
#[derive(Debug, Clone)]
pub enum MatrixFn {
    Constant(Matrix),
    PiecewiseConstant { times: Vec<f64>, values: Vec<Matrix> },
}

impl MatrixFn {
    pub fn at(&self, t: f64) -> &Matrix {
        match self {
            MatrixFn::Constant(m) => m,
            MatrixFn::PiecewiseConstant { times, values } => {
                let idx = match times.binary_search_by(|v| v.partial_cmp(&t).unwrap()) {
                    Ok(i) => i,
                    Err(0) => 0,
                    Err(i) => i - 1,
                };
                &values[idx.min(values.len() - 1)]
            }
        }
    }

    fn first(&self) -> &Matrix {
        match self {
            MatrixFn::Constant(m) => m,
            MatrixFn::PiecewiseConstant { values, .. } => &values[0],
        }
    }

    fn all_values(&self) -> Vec<&Matrix> {
        match self {
            MatrixFn::Constant(m) => vec![m],
            MatrixFn::PiecewiseConstant { values, .. } => values.iter().collect(),
        }
    }
}

/// Structural dynamics `x' = A(t) x + B(t) u`, `y = C(t) x`.
#[derive(Debug, Clone)]
pub struct LinearSystem {
    a: MatrixFn,
    b: MatrixFn,
    c: MatrixFn,
    state_dim: usize,
    input_dim: usize,
    output_dim: usize,
    steps_per_unit: usize,
}

impl LinearSystem {
    pub fn new(a: MatrixFn, b: MatrixFn, c: MatrixFn) -> Result<Self, LtiError> {
        let n = a.first().rows();
        let m = b.first().cols();
        let p = c.first().rows();
        for v in a.all_values() {
            if v.rows() != n || v.cols() != n {
                return Err(LtiError::DimensionMismatch(format!(
                    "A must be {n}x{n} at all times, got {}x{}",
                    v.rows(),
                    v.cols()
                )));
            }
        }
        for v in b.all_values() {
            if v.rows() != n || v.cols() != m {
                return Err(LtiError::DimensionMismatch(format!(
                    "B must be {n}x{m} at all times, got {}x{}",
                    v.rows(),
                    v.cols()
                )));
            }
        }
        for v in c.all_values() {
            if v.rows() != p || v.cols() != n {
                return Err(LtiError::DimensionMismatch(format!(
                    "C must be {p}x{n} at all times, got {}x{}",
                    v.rows(),
                    v.cols()
                )));
            }
        }
        for table in [&a, &b, &c] {
            if let MatrixFn::PiecewiseConstant { times, values } = table {
                if times.is_empty()
                    || times.len() != values.len()
                    || times.windows(2).any(|w| w[0] >= w[1])
                {
                    return Err(LtiError::DimensionMismatch(
                        "piecewise table needs strictly increasing breakpoints, one per value"
                            .to_string(),
                    ));
                }
            }
        }
        Ok(Self {
            a,
            b,
            c,
            state_dim: n,
            input_dim: m,
            output_dim: p,
            steps_per_unit: 1000,
        })
    }

    /// Time-invariant system from constant matrices.
    pub fn time_invariant(a: Matrix, b: Matrix, c: Matrix) -> Result<Self, LtiError> {
        Self::new(
            MatrixFn::Constant(a),
            MatrixFn::Constant(b),
            MatrixFn::Constant(c),
        )
    }

    pub fn with_steps_per_unit(mut self, steps: usize) -> Self {
        self.steps_per_unit = steps.max(1);
        self
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn steps_per_unit(&self) -> usize {
        self.steps_per_unit
    }

    pub fn a_at(&self, t: f64) -> &Matrix {
        self.a.at(t)
    }

    pub fn b_at(&self, t: f64) -> &Matrix {
        self.b.at(t)
    }

    pub fn c_at(&self, t: f64) -> &Matrix {
        self.c.at(t)
    }

    pub(crate) fn steps_for(&self, span: f64) -> usize {
        ((self.steps_per_unit as f64 * span).ceil() as usize).max(1)
    }
}

pub(crate) fn flatten(m: &Matrix) -> Vec<f64> {
    m.data().to_vec()
}

pub(crate) fn unflatten(rows: usize, cols: usize, v: &[f64]) -> Matrix {
    Matrix::from_fn(rows, cols, |i, j| v[i * cols + j])
}

/// Interior breakpoints of the system's coefficient tables inside `(lo, hi)`.
fn interior_breakpoints(sys: &LinearSystem, lo: f64, hi: f64) -> Vec<f64> {
    let mut pts = Vec::new();
    for table in [&sys.a, &sys.b, &sys.c] {
        if let MatrixFn::PiecewiseConstant { times, .. } = table {
            for &t in times {
                if t > lo && t < hi {
                    pts.push(t);
                }
            }
        }
    }
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.dedup();
    pts
}

/// Splits `[lo, hi]` at coefficient breakpoints so each piece is smooth.
fn smooth_segments(sys: &LinearSystem, lo: f64, hi: f64) -> Vec<(f64, f64)> {
    let mut bounds = vec![lo];
    bounds.extend(interior_breakpoints(sys, lo, hi));
    bounds.push(hi);
    bounds.windows(2).map(|w| (w[0], w[1])).collect()
}

/// Transition over a single smooth piece, in either direction. The
/// coefficients are sampled at the piece midpoint: tables are piecewise
/// constant, so this is exact and keeps RK4 edge stages from picking up
/// the right-limit value of the adjacent piece.
fn transition_piece(sys: &LinearSystem, t: f64, t_prime: f64) -> Result<Matrix, LtiError> {
    let n = sys.state_dim();
    let span = (t - t_prime).abs();
    let steps = sys.steps_for(span);
    let a_mat = sys.a_at(0.5 * (t + t_prime)).clone();
    let phi0 = flatten(&Matrix::identity(n));
    let sol = if t > t_prime {
        // d/dtau Phi(tau, t') = A Phi, tau from t' up to t.
        integrate_ode(
            |_, x| flatten(&a_mat.matmul(&unflatten(n, n, x))),
            &phi0,
            t_prime,
            t,
            steps,
        )?
    } else {
        // Reverse time: M(s) = Phi(t'-s, t') obeys dM/ds = -A M.
        integrate_ode(
            |_, x| flatten(&a_mat.matmul(&unflatten(n, n, x)).scaled(-1.0)),
            &phi0,
            0.0,
            span,
            steps,
        )?
    };
    Ok(unflatten(n, n, sol.final_state()))
}

/// State-transition matrix `Phi(t, t')`, integrating the matrix ODE from
/// `t'` to `t` with identity initial condition. Valid for either ordering;
/// piecewise-constant coefficients are integrated piece by piece.
pub fn state_transition(sys: &LinearSystem, t: f64, t_prime: f64) -> Result<Matrix, LtiError> {
    let n = sys.state_dim();
    if t == t_prime {
        return Ok(Matrix::identity(n));
    }
    let (lo, hi) = (t.min(t_prime), t.max(t_prime));
    let mut phi = Matrix::identity(n);
    if t > t_prime {
        for (a, b) in smooth_segments(sys, lo, hi) {
            phi = transition_piece(sys, b, a)?.matmul(&phi);
        }
    } else {
        for (a, b) in smooth_segments(sys, lo, hi).into_iter().rev() {
            phi = transition_piece(sys, a, b)?.matmul(&phi);
        }
    }
    Ok(phi)
}

/// Transition matrices `Phi(t, tau)` for all `tau` on a uniform grid over
/// `[lo, hi]`, where `t` must be one of the endpoints. Returned in
/// ascending `tau` order with `intervals + 1` nodes.
pub(crate) fn transition_profile(
    sys: &LinearSystem,
    t: f64,
    lo: f64,
    hi: f64,
    intervals: usize,
) -> Result<Vec<Matrix>, LtiError> {
    let n = sys.state_dim();
    let phi0 = flatten(&Matrix::identity(n));
    // d/dtau Phi(t, tau) = -Phi(t, tau) A(tau), Phi(t, t) = I.
    if (t - lo).abs() <= (t - hi).abs() {
        let sol = integrate_ode(
            |tau, x| flatten(&unflatten(n, n, x).matmul(sys.a_at(tau)).scaled(-1.0)),
            &phi0,
            lo,
            hi,
            intervals,
        )?;
        Ok(sol.states.iter().map(|s| unflatten(n, n, s)).collect())
    } else {
        // Start at tau = hi and march down; flip the stored order back.
        let sol = integrate_ode(
            |s, x| flatten(&unflatten(n, n, x).matmul(sys.a_at(hi - s))),
            &phi0,
            0.0,
            hi - lo,
            intervals,
        )?;
        let mut mats: Vec<Matrix> = sol.states.iter().map(|s| unflatten(n, n, s)).collect();
        mats.reverse();
        Ok(mats)
    }
}

fn simpson_over_profile(times: &[f64], integrand: impl Fn(usize, f64) -> Matrix) -> Matrix {
    let m = times.len() - 1;
    debug_assert!(m >= 2 && m.is_multiple_of(2));
    let h = (times[m] - times[0]) / m as f64;
    let mut acc = integrand(0, times[0]);
    for k in 1..m {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        acc = acc.add(&integrand(k, times[k]).scaled(w));
    }
    acc = acc.add(&integrand(m, times[m]));
    acc.scaled(h / 3.0)
}

/// Local controllability Gramian over one smooth piece `[a, b]` with
/// evaluation point `a`: `∫_a^b Phi(a,tau) B B^T Phi(a,tau)^T dtau`.
/// Coefficients are frozen at the piece midpoint (exact for tables).
fn local_ctrl_gramian(sys: &LinearSystem, a: f64, b: f64) -> Result<Matrix, LtiError> {
    let n = sys.state_dim();
    let intervals = sys.steps_for(b - a).next_multiple_of(2);
    let a_mat = sys.a_at(0.5 * (a + b)).clone();
    let b_mat = sys.b_at(0.5 * (a + b)).clone();
    let phi0 = flatten(&Matrix::identity(n));
    // d/dtau Phi(a, tau) = -Phi(a, tau) A.
    let sol = integrate_ode(
        |_, x| flatten(&unflatten(n, n, x).matmul(&a_mat).scaled(-1.0)),
        &phi0,
        a,
        b,
        intervals,
    )?;
    let phis: Vec<Matrix> = sol.states.iter().map(|s| unflatten(n, n, s)).collect();
    let h = (b - a) / intervals as f64;
    let times: Vec<f64> = (0..=intervals).map(|k| a + k as f64 * h).collect();
    Ok(simpson_over_profile(&times, |k, _| {
        let pb = phis[k].matmul(&b_mat);
        pb.matmul(&pb.transpose())
    }))
}

/// Controllability Gramian `W(t, t')`, integrated over
/// `[min(t,t'), max(t,t')]` with evaluation point `t` by composite Simpson
/// on the integrator's grid density. Symmetric PSD for either ordering.
pub fn controllability_gramian(
    sys: &LinearSystem,
    t: f64,
    t_prime: f64,
) -> Result<Matrix, LtiError> {
    assert!(t != t_prime, "controllability_gramian requires t != t'");
    let (lo, hi) = (t.min(t_prime), t.max(t_prime));
    let mut w = Matrix::zeros(sys.state_dim(), sys.state_dim());
    for (a, b) in smooth_segments(sys, lo, hi) {
        let local = local_ctrl_gramian(sys, a, b)?;
        let brace = state_transition(sys, t, a)?;
        w = w.add(&brace.matmul(&local).matmul(&brace.transpose()));
    }
    Ok(w.symmetrized())
}

/// Observability Gramian `M(t0, t1) = ∫ Phi(tau,t0)^T C^T C Phi(tau,t0) dtau`
/// over `t0 < t1`, symmetrized.
pub fn observability_gramian(sys: &LinearSystem, t0: f64, t1: f64) -> Result<Matrix, LtiError> {
    assert!(t0 < t1, "observability_gramian requires t0 < t1");
    let n = sys.state_dim();
    let mut m = Matrix::zeros(n, n);
    for (a, b) in smooth_segments(sys, t0, t1) {
        let intervals = sys.steps_for(b - a).next_multiple_of(2);
        let a_mat = sys.a_at(0.5 * (a + b)).clone();
        let c_mat = sys.c_at(0.5 * (a + b)).clone();
        let phi0 = flatten(&Matrix::identity(n));
        // Phi(tau, a) marched forward over the smooth piece.
        let sol = integrate_ode(
            |_, x| flatten(&a_mat.matmul(&unflatten(n, n, x))),
            &phi0,
            a,
            b,
            intervals,
        )?;
        let fwd: Vec<Matrix> = sol.states.iter().map(|s| unflatten(n, n, s)).collect();
        let h = (b - a) / intervals as f64;
        let times: Vec<f64> = (0..=intervals).map(|k| a + k as f64 * h).collect();
        let local = simpson_over_profile(&times, |k, _| {
            let cphi = c_mat.matmul(&fwd[k]);
            cphi.transpose().matmul(&cphi)
        });
        let brace = state_transition(sys, a, t0)?;
        m = m.add(&brace.transpose().matmul(&local).matmul(&brace));
    }
    Ok(m.symmetrized())
}

/// Inverts a Gramian after checking the controllability eigenvalue policy.
pub(crate) fn gramian_inverse(w: &Matrix) -> Result<Matrix, LtiError> {
    let (eigs, vecs) = jacobi_eigh(w)?;
    let hi = *eigs.last().expect("nonempty spectrum");
    let lo = eigs[0];
    if hi <= 0.0 || lo < CONTROLLABILITY_EIG_RATIO * hi {
        return Err(LtiError::NotControllable {
            ratio: if hi > 0.0 { lo / hi } else { 0.0 },
        });
    }
    let n = eigs.len();
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let mut acc = 0.0;
            for k in 0..n {
                acc += vecs.get(i, k) / eigs[k] * vecs.get(j, k);
            }
            out.set(i, j, acc);
        }
    }
    Ok(out.symmetrized())
}

/// Minimum control energy to steer `(x0, t0)` to `(x1, t1)`.
pub fn min_energy_cost(
    sys: &LinearSystem,
    x0: &[f64],
    x1: &[f64],
    t0: f64,
    t1: f64,
) -> Result<f64, LtiError> {
    let phi = state_transition(sys, t1, t0)?;
    let w = controllability_gramian(sys, t1, t0)?;
    let winv = gramian_inverse(&w)?;
    let d = sub_vec(x1, &phi.matvec(x0));
    Ok(winv.quad_form(&d, &d).max(0.0))
}

/// Minimum-energy feedback law `u(t, x) = B(t)^T W(t,t1)^{-1} (Phi(t,t1) x1 - x)`.
///
/// Construction precomputes `Phi(t, t1)` and `W(t, t1)` on a half-step grid
/// over `[t0, t1]`; evaluation interpolates, except inside the final grid
/// cell where the short-horizon Gramian is recomputed on demand to keep its
/// inverse accurate as `W -> 0`.
#[derive(Debug, Clone)]
pub struct FeedbackLaw {
    sys: LinearSystem,
    target: Vec<f64>,
    t0: f64,
    t1: f64,
    times: Vec<f64>,
    phis: Vec<Matrix>,
    grams: Vec<Matrix>,
}

impl FeedbackLaw {
    pub fn target(&self) -> &[f64] {
        &self.target
    }

    pub fn horizon(&self) -> (f64, f64) {
        (self.t0, self.t1)
    }

    fn spacing(&self) -> f64 {
        self.times[1] - self.times[0]
    }

    /// Control input at `(t, x)`; rejected for `t` outside `[t0, t1)`.
    pub fn eval(&self, t: f64, x: &[f64]) -> Result<Vec<f64>, LtiError> {
        if !(t >= self.t0 && t < self.t1) {
            return Err(LtiError::FeedbackOutsideHorizon { t });
        }
        // Near t1 the Gramian entries decay at different polynomial rates
        // and grid interpolation destroys the small eigenvalues, so the
        // short-horizon Gramian is rebuilt on demand there.
        let exact_window = 32.0 * self.spacing();
        let (phi, w) = if t > self.t1 - exact_window {
            let phi = state_transition(&self.sys, t, self.t1)?;
            let intervals = 32;
            let phis = transition_profile(&self.sys, t, t, self.t1, intervals)?;
            let step = (self.t1 - t) / intervals as f64;
            let times: Vec<f64> = (0..=intervals).map(|k| t + k as f64 * step).collect();
            let w = simpson_over_profile(&times, |k, tau| {
                let pb = phis[k].matmul(self.sys.b_at(tau));
                pb.matmul(&pb.transpose())
            })
            .symmetrized();
            (phi, w)
        } else {
            let pos = (t - self.t0) / self.spacing();
            let idx = (pos.floor() as usize).min(self.times.len() - 2);
            let alpha = pos - idx as f64;
            let interp = |lo: &Matrix, hi: &Matrix| {
                Matrix::from_fn(lo.rows(), lo.cols(), |i, j| {
                    (1.0 - alpha) * lo.get(i, j) + alpha * hi.get(i, j)
                })
            };
            (
                interp(&self.phis[idx], &self.phis[idx + 1]),
                interp(&self.grams[idx], &self.grams[idx + 1]),
            )
        };
        let winv = gramian_inverse(&w)?;
        let residual = sub_vec(&phi.matvec(&self.target), x);
        Ok(self.sys.b_at(t).transpose().matvec(&winv.matvec(&residual)))
    }

    /// Closed-loop RK4 simulation from `(x0, t0)` to `t1`, returning the
    /// trajectory and the control energy accumulated by Simpson along it.
    ///
    /// The feedback gain grows like the inverse of the remaining horizon,
    /// which would leave the fixed-step closed loop outside the RK4
    /// stability region in the last few steps. The optimal feedback is
    /// time-consistent, so over that short tail the simulation switches to
    /// the identical re-planned open-loop control from the entry state.
    pub fn simulate(&self, x0: &[f64]) -> Result<(OdeSolution, f64), LtiError> {
        let steps = self.sys.steps_for(self.t1 - self.t0);
        let h = (self.t1 - self.t0) / steps as f64;
        // The tail window must keep its short-horizon Gramian well inside
        // the controllability policy: the grid-interpolated Gramians used
        // by the closed-loop phase carry O(spacing^2) noise, which swamps
        // eigenvalues near the bare 1e-12 threshold on deep integrator
        // chains. Widening the tail costs no accuracy: it is exact
        // re-planning of the same optimal trajectory.
        let mut tail_steps = 4.min(steps - 1).max(1);
        loop {
            let t_try = self.t1 - tail_steps as f64 * h;
            let w = controllability_gramian(&self.sys, self.t1, t_try)?;
            let (eigs, _) = jacobi_eigh(&w)?;
            let comfortable = eigs[0] > 1e-9 * eigs[eigs.len() - 1].max(f64::MIN_POSITIVE);
            if comfortable || 2 * tail_steps > steps {
                break;
            }
            tail_steps *= 2;
        }
        let tail_steps = tail_steps.min(steps - 1).max(1);
        let t_switch = self.t1 - tail_steps as f64 * h;
        let main_steps = steps - tail_steps;
        let mut err: Option<LtiError> = None;
        let n = self.sys.state_dim();
        // The running control energy rides along as an extra state so RK4
        // integrates it at full order together with the trajectory.
        let mut aug0 = x0.to_vec();
        aug0.push(0.0);
        let sol_aug = integrate_ode(
            |t, aug| {
                let x = &aug[..n];
                match self.eval(t.min(t_switch), x) {
                    Ok(u) => {
                        let ax = self.sys.a_at(t).matvec(x);
                        let bu = self.sys.b_at(t).matvec(&u);
                        let mut out: Vec<f64> =
                            ax.iter().zip(&bu).map(|(a, b)| a + b).collect();
                        out.push(dot(&u, &u));
                        out
                    }
                    Err(e) => {
                        err = Some(e);
                        vec![0.0; n + 1]
                    }
                }
            },
            &aug0,
            self.t0,
            t_switch,
            main_steps.max(1),
        )?;
        if let Some(e) = err {
            return Err(e);
        }
        let sol = OdeSolution {
            times: sol_aug.times,
            states: sol_aug.states.iter().map(|s| s[..n].to_vec()).collect(),
        };
        let mut energy = sol_aug.states.last().expect("nonempty")[n];
        // Tail: open-loop form of the same feedback, planned at t_switch.
        let x_switch = sol.final_state().to_vec();
        let phi_tail = state_transition(&self.sys, self.t1, t_switch)?;
        let w_tail = controllability_gramian(&self.sys, self.t1, t_switch)?;
        let winv = gramian_inverse(&w_tail)?;
        let lambda = winv.matvec(&sub_vec(&self.target, &phi_tail.matvec(&x_switch)));
        let tail_intervals = (8 * tail_steps).next_multiple_of(2);
        let profile =
            transition_profile(&self.sys, self.t1, t_switch, self.t1, tail_intervals)?;
        let step = (self.t1 - t_switch) / tail_intervals as f64;
        let u_at = |idx: usize| -> Vec<f64> {
            let tau = t_switch + idx as f64 * step;
            self.sys
                .b_at(tau)
                .transpose()
                .matvec(&profile[idx].transpose().matvec(&lambda))
        };
        let tail_sol = integrate_ode(
            |t, x| {
                let idx = (((t - t_switch) / step).round() as usize).min(tail_intervals);
                let u = u_at(idx);
                let ax = self.sys.a_at(t).matvec(x);
                let bu = self.sys.b_at(t).matvec(&u);
                ax.iter().zip(&bu).map(|(a, b)| a + b).collect()
            },
            &x_switch,
            t_switch,
            self.t1,
            tail_intervals / 2,
        )?;
        for k in 0..tail_intervals / 2 {
            let (a, b, c) = (
                dot(&u_at(2 * k), &u_at(2 * k)),
                dot(&u_at(2 * k + 1), &u_at(2 * k + 1)),
                dot(&u_at(2 * k + 2), &u_at(2 * k + 2)),
            );
            energy += step * 2.0 / 6.0 * (a + 4.0 * b + c);
        }
        let mut times = sol.times;
        let mut states = sol.states;
        times.extend_from_slice(&tail_sol.times[1..]);
        states.extend_from_slice(&tail_sol.states[1..]);
        Ok((OdeSolution { times, states }, energy))
    }
}

/// Builds the minimum-energy feedback law steering `(x0, t0)` to `(x1, t1)`.
/// Controllability over the horizon is verified at construction.
pub fn min_energy_control(
    sys: &LinearSystem,
    x0: &[f64],
    x1: &[f64],
    t0: f64,
    t1: f64,
) -> Result<FeedbackLaw, LtiError> {
    let n = sys.state_dim();
    if x0.len() != n || x1.len() != n {
        return Err(LtiError::DimensionMismatch(format!(
            "boundary states must have dimension {n}"
        )));
    }
    assert!(t0 < t1, "min_energy_control requires t0 < t1");
    let w_full = controllability_gramian(sys, t1, t0)?;
    gramian_inverse(&w_full)?;
    let steps = sys.steps_for(t1 - t0);
    let nodes = 2 * steps;
    // Backward joint pass for Phi(tau, t1) and W(tau, t1):
    //   dPhi/dtau = A(tau) Phi,  dW/dtau = A W + W A^T - B B^T,
    // initialized at tau = t1 with (I, 0), marched down to t0.
    let init: Vec<f64> = flatten(&Matrix::identity(n))
        .into_iter()
        .chain(std::iter::repeat_n(0.0, n * n))
        .collect();
    let sol = integrate_ode(
        |s, state| {
            let tau = t1 - s;
            let phi = unflatten(n, n, &state[..n * n]);
            let w = unflatten(n, n, &state[n * n..]);
            let a = sys.a_at(tau);
            let b = sys.b_at(tau);
            // marching in s = t1 - tau flips every sign
            let dphi = a.matmul(&phi).scaled(-1.0);
            let bbt = b.matmul(&b.transpose());
            let dw = bbt.sub(&a.matmul(&w)).sub(&w.matmul(&a.transpose()));
            let mut out = flatten(&dphi);
            out.extend(flatten(&dw));
            out
        },
        &init,
        0.0,
        t1 - t0,
        nodes,
    )?;
    let mut times = Vec::with_capacity(nodes + 1);
    let mut phis = Vec::with_capacity(nodes + 1);
    let mut grams = Vec::with_capacity(nodes + 1);
    for (k, state) in sol.states.iter().enumerate().rev() {
        times.push(t1 - sol.times[k]);
        phis.push(unflatten(n, n, &state[..n * n]));
        grams.push(unflatten(n, n, &state[n * n..]).symmetrized());
    }
    Ok(FeedbackLaw {
        sys: sys.clone(),
        target: x1.to_vec(),
        t0,
        t1,
        times,
        phis,
        grams,
    })
}

/// Expected minimum energy when the endpoints are jointly Gaussian with
/// means `m0, m1`, covariances `s0, s1` and cross-covariance `s01`:
/// the trace identity applied to the second-moment blocks `S + m m^T`.
#[allow(clippy::too_many_arguments)] // means, covariances and horizon are all the contract
pub fn expected_min_energy_gaussian(
    sys: &LinearSystem,
    m0: &[f64],
    s0: &Matrix,
    m1: &[f64],
    s1: &Matrix,
    s01: &Matrix,
    t0: f64,
    t1: f64,
) -> Result<f64, LtiError> {
    let n = sys.state_dim();
    for (name, s) in [("S0", s0), ("S1", s1), ("S01", s01)] {
        if s.rows() != n || s.cols() != n {
            return Err(LtiError::DimensionMismatch(format!("{name} must be {n}x{n}")));
        }
    }
    check_psd(s0)?;
    check_psd(s1)?;
    let joint = Matrix::from_fn(2 * n, 2 * n, |i, j| match (i < n, j < n) {
        (true, true) => s0.get(i, j),
        (true, false) => s01.get(i, j - n),
        (false, true) => s01.get(j, i - n),
        (false, false) => s1.get(i - n, j - n),
    });
    check_psd(&joint)?;
    let phi = state_transition(sys, t0, t1)?;
    let w = controllability_gramian(sys, t0, t1)?;
    let winv = gramian_inverse(&w)?;
    let outer = |a: &[f64], b: &[f64]| Matrix::from_fn(n, n, |i, j| a[i] * b[j]);
    let e0 = s0.add(&outer(m0, m0));
    let e01 = s01.add(&outer(m0, m1));
    let e1 = s1.add(&outer(m1, m1));
    let t_a = winv.matmul(&e0).trace();
    let t_b = phi.transpose().matmul(&winv).matmul(&e01).trace();
    let t_c = phi
        .transpose()
        .matmul(&winv)
        .matmul(&phi)
        .matmul(&e1)
        .trace();
    Ok(t_a - 2.0 * t_b + t_c)
}

fn check_psd(s: &Matrix) -> Result<(), LtiError> {
    let (eigs, _) = jacobi_eigh(s)?;
    if eigs[0] < numerics::PSD_EIG_TOL {
        return Err(LtiError::Numerics(NumericsError::NotPsd {
            eigenvalue: eigs[0],
        }));
    }
    Ok(())
}

/// Stacked observability matrix `[C; CA; ...; CA^{n-1}]`.
pub fn observability_matrix(a: &Matrix, c: &Matrix) -> Result<Matrix, LtiError> {
    if !a.is_square() || c.cols() != a.rows() {
        return Err(LtiError::DimensionMismatch(format!(
            "A must be square and C must have {} columns",
            a.rows()
        )));
    }
    let n = a.rows();
    let p = c.rows();
    let mut out = Matrix::zeros(n * p, n);
    let mut block = c.clone();
    for k in 0..n {
        for i in 0..p {
            for j in 0..n {
                out.set(k * p + i, j, block.get(i, j));
            }
        }
        block = block.matmul(a);
    }
    Ok(out)
}

/// Classical Kalman rank test: `(A, C)` is observable iff the stacked
/// observability matrix has full column rank.
pub fn is_observable_pair(a: &Matrix, c: &Matrix) -> Result<bool, LtiError> {
    let obs = observability_matrix(a, c)?;
    Ok(row_echelon_rank(&obs, RANK_REL_TOL).rank == a.rows())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::norm;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mat(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn double_integrator() -> LinearSystem {
        LinearSystem::time_invariant(
            mat(&[&[0.0, 1.0], &[0.0, 0.0]]),
            mat(&[&[0.0], &[1.0]]),
            mat(&[&[1.0, 0.0]]),
        )
        .unwrap()
    }

    fn scalar_integrator() -> LinearSystem {
        LinearSystem::time_invariant(
            Matrix::zeros(1, 1),
            Matrix::identity(1),
            Matrix::identity(1),
        )
        .unwrap()
    }

    /// Truncated-series matrix exponential with scaling and squaring;
    /// independent reference for constant-A transition matrices.
    fn expm_reference(a: &Matrix, t: f64) -> Matrix {
        let n = a.rows();
        let at = a.scaled(t);
        let mut scale = 0u32;
        let mut mag = at.max_abs();
        while mag > 0.5 {
            mag /= 2.0;
            scale += 1;
        }
        let small = at.scaled(0.5f64.powi(scale as i32));
        let mut sum = Matrix::identity(n);
        let mut term = Matrix::identity(n);
        for k in 1..=20 {
            term = term.matmul(&small).scaled(1.0 / k as f64);
            sum = sum.add(&term);
        }
        for _ in 0..scale {
            sum = sum.matmul(&sum);
        }
        sum
    }

    #[test]
    fn transition_at_equal_times_is_identity() {
        let sys = double_integrator();
        let phi = state_transition(&sys, 0.7, 0.7).unwrap();
        assert!(phi.max_abs_diff(&Matrix::identity(2)) < 1e-15);
    }

    #[test]
    fn transition_of_nilpotent_system() {
        let sys = double_integrator();
        let phi = state_transition(&sys, 1.0, 0.0).unwrap();
        assert!(phi.max_abs_diff(&mat(&[&[1.0, 1.0], &[0.0, 1.0]])) < 1e-9);
    }

    #[test]
    fn scalar_transition_is_exponential() {
        let sys = LinearSystem::time_invariant(
            Matrix::identity(1),
            Matrix::identity(1),
            Matrix::identity(1),
        )
        .unwrap();
        let fwd = state_transition(&sys, 2.0, 0.5).unwrap();
        assert!((fwd.get(0, 0) - 1.5f64.exp()).abs() < 1e-9);
        let bwd = state_transition(&sys, 0.5, 2.0).unwrap();
        assert!((bwd.get(0, 0) - (-1.5f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn double_integrator_gramians_match_closed_form() {
        let sys = double_integrator();
        let w10 = controllability_gramian(&sys, 1.0, 0.0).unwrap();
        let expect10 = mat(&[&[1.0 / 3.0, 0.5], &[0.5, 1.0]]);
        assert!(w10.max_abs_diff(&expect10) < 1e-8);
        let w01 = controllability_gramian(&sys, 0.0, 1.0).unwrap();
        let expect01 = mat(&[&[1.0 / 3.0, -0.5], &[-0.5, 1.0]]);
        assert!(w01.max_abs_diff(&expect01) < 1e-8);
    }

    #[test]
    fn zero_input_matrix_gives_zero_gramian() {
        let sys = LinearSystem::time_invariant(
            mat(&[&[0.0, 1.0], &[0.0, 0.0]]),
            Matrix::zeros(2, 1),
            mat(&[&[1.0, 0.0]]),
        )
        .unwrap();
        let w = controllability_gramian(&sys, 1.0, 0.0).unwrap();
        assert!(w.max_abs() < 1e-15);
    }

    #[test]
    fn observability_gramian_cases() {
        let sys = double_integrator();
        let m = observability_gramian(&sys, 0.0, 1.0).unwrap();
        assert!(m.max_abs_diff(&mat(&[&[1.0, 0.5], &[0.5, 1.0 / 3.0]])) < 1e-8);

        let zero_c = LinearSystem::time_invariant(
            mat(&[&[0.0, 1.0], &[0.0, 0.0]]),
            mat(&[&[0.0], &[1.0]]),
            Matrix::zeros(1, 2),
        )
        .unwrap();
        assert!(
            observability_gramian(&zero_c, 0.0, 1.0)
                .unwrap()
                .max_abs()
                < 1e-15
        );

        let static_full = LinearSystem::time_invariant(
            Matrix::zeros(2, 2),
            Matrix::identity(2),
            Matrix::identity(2),
        )
        .unwrap();
        let m = observability_gramian(&static_full, 0.0, 1.0).unwrap();
        assert!(m.max_abs_diff(&Matrix::identity(2)) < 1e-10);
    }

    #[test]
    fn free_motion_costs_nothing() {
        let sys = double_integrator();
        let x0 = [0.4, -0.3];
        let x1 = state_transition(&sys, 1.0, 0.0).unwrap().matvec(&x0);
        let cost = min_energy_cost(&sys, &x0, &x1, 0.0, 1.0).unwrap();
        assert!(cost < 1e-12);
    }

    #[test]
    fn double_integrator_unit_translation_costs_twelve() {
        let sys = double_integrator();
        let cost = min_energy_cost(&sys, &[0.0, 0.0], &[1.0, 0.0], 0.0, 1.0).unwrap();
        assert!((cost - 12.0).abs() < 1e-6);
    }

    #[test]
    fn scalar_steering_costs_squared_distance() {
        let sys = scalar_integrator();
        for c in [0.5, -2.0, 3.0] {
            let cost = min_energy_cost(&sys, &[0.0], &[c], 0.0, 1.0).unwrap();
            assert!((cost - c * c).abs() < 1e-9);
        }
    }

    #[test]
    fn uncontrollable_system_is_rejected() {
        let sys = LinearSystem::time_invariant(
            Matrix::zeros(2, 2),
            mat(&[&[1.0], &[0.0]]),
            Matrix::identity(2),
        )
        .unwrap();
        let res = min_energy_cost(&sys, &[0.0, 0.0], &[0.0, 1.0], 0.0, 1.0);
        assert!(matches!(res, Err(LtiError::NotControllable { .. })));
    }

    #[test]
    fn feedback_law_is_zero_along_free_trajectory() {
        let sys = double_integrator();
        let x0 = [0.2, 0.7];
        let x1 = state_transition(&sys, 1.0, 0.0).unwrap().matvec(&x0);
        let law = min_energy_control(&sys, &x0, &x1, 0.0, 1.0).unwrap();
        for &t in &[0.0, 0.25, 0.5, 0.75, 0.9] {
            let xt = state_transition(&sys, t, 0.0).unwrap().matvec(&x0);
            let u = law.eval(t, &xt).unwrap();
            assert!(norm(&u) < 1e-6, "u({t}) = {u:?}");
        }
        let (_, energy) = law.simulate(&x0).unwrap();
        assert!(energy < 1e-9);
    }

    #[test]
    fn feedback_law_steers_double_integrator() {
        let sys = double_integrator();
        let law = min_energy_control(&sys, &[0.0, 0.0], &[1.0, 0.0], 0.0, 1.0).unwrap();
        let (sol, energy) = law.simulate(&[0.0, 0.0]).unwrap();
        let end = sol.final_state();
        assert!(
            (end[0] - 1.0).abs() < 1e-4 && end[1].abs() < 1e-4,
            "endpoint {end:?}"
        );
        assert!((energy - 12.0).abs() < 1e-3, "energy {energy}");
    }

    #[test]
    fn scalar_optimal_control_is_constant() {
        let sys = scalar_integrator();
        let law = min_energy_control(&sys, &[0.0], &[1.0], 0.0, 1.0).unwrap();
        for &t in &[0.0, 0.3, 0.6, 0.9, 0.999] {
            // On the optimal trajectory x(t) = t the control is exactly 1.
            let u = law.eval(t, &[t]).unwrap();
            assert!((u[0] - 1.0).abs() < 1e-6, "u({t}) = {}", u[0]);
        }
    }

    #[test]
    fn feedback_rejects_final_time() {
        let sys = scalar_integrator();
        let law = min_energy_control(&sys, &[0.0], &[1.0], 0.0, 1.0).unwrap();
        assert!(matches!(
            law.eval(1.0, &[1.0]),
            Err(LtiError::FeedbackOutsideHorizon { .. })
        ));
    }

    #[test]
    fn expected_energy_degenerates_to_point_cost() {
        let sys = double_integrator();
        let z = Matrix::zeros(2, 2);
        let m0 = [0.3, -0.2];
        let m1 = [1.0, 0.4];
        let expected =
            expected_min_energy_gaussian(&sys, &m0, &z, &m1, &z, &z, 0.0, 1.0).unwrap();
        let direct = min_energy_cost(&sys, &m0, &m1, 0.0, 1.0).unwrap();
        assert!((expected - direct).abs() < 1e-9);
    }

    #[test]
    fn perfectly_correlated_scalar_endpoints_cost_nothing() {
        let sys = scalar_integrator();
        let one = Matrix::identity(1);
        let v = expected_min_energy_gaussian(&sys, &[0.0], &one, &[0.0], &one, &one, 0.0, 1.0)
            .unwrap();
        assert!(v.abs() < 1e-9);
    }

    #[test]
    fn expected_energy_matches_monte_carlo() {
        let sys = double_integrator();
        let m0 = [0.5, -0.3];
        let m1 = [-0.2, 0.8];
        let s0 = mat(&[&[0.5, 0.1], &[0.1, 0.4]]);
        let s1 = mat(&[&[0.3, -0.05], &[-0.05, 0.6]]);
        let s01 = mat(&[&[0.1, 0.0], &[0.05, 0.1]]);
        let formula =
            expected_min_energy_gaussian(&sys, &m0, &s0, &m1, &s1, &s01, 0.0, 1.0).unwrap();
        let joint = Matrix::from_fn(4, 4, |i, j| match (i < 2, j < 2) {
            (true, true) => s0.get(i, j),
            (true, false) => s01.get(i, j - 2),
            (false, true) => s01.get(j, i - 2),
            (false, false) => s1.get(i - 2, j - 2),
        });
        let root = crate::numerics::psd_sqrt(&joint).unwrap();
        let phi = state_transition(&sys, 1.0, 0.0).unwrap();
        let winv = gramian_inverse(&controllability_gramian(&sys, 1.0, 0.0).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let samples = 100_000;
        let mut acc = 0.0;
        for _ in 0..samples {
            let z: Vec<f64> = (0..4)
                .map(|_| {
                    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
                    let u2: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                    (-2.0 * u1.ln()).sqrt() * u2.cos()
                })
                .collect();
            let xy = root.matvec(&z);
            let x0 = [m0[0] + xy[0], m0[1] + xy[1]];
            let x1 = [m1[0] + xy[2], m1[1] + xy[3]];
            let d = sub_vec(&x1, &phi.matvec(&x0));
            acc += winv.quad_form(&d, &d);
        }
        let mc = acc / samples as f64;
        assert!(
            (mc - formula).abs() / formula.abs() < 0.01,
            "MC {mc} vs formula {formula}"
        );
    }

    #[test]
    fn observability_rank_examples() {
        let a = mat(&[&[0.0, 1.0], &[0.0, 0.0]]);
        assert!(is_observable_pair(&a, &mat(&[&[1.0, 0.0]])).unwrap());
        assert!(!is_observable_pair(&a, &mat(&[&[0.0, 1.0]])).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let any = Matrix::from_fn(3, 3, |_, _| rng.gen_range(-1.0..1.0));
            assert!(is_observable_pair(&any, &Matrix::identity(3)).unwrap());
        }
        assert!(matches!(
            is_observable_pair(&a, &mat(&[&[1.0, 0.0, 0.0]])),
            Err(LtiError::DimensionMismatch(_))
        ));
    }

    fn random_piecewise_system(rng: &mut ChaCha8Rng, n: usize) -> LinearSystem {
        let times = vec![0.0, 0.9];
        let values: Vec<Matrix> = (0..2)
            .map(|_| Matrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0)))
            .collect();
        LinearSystem::new(
            MatrixFn::PiecewiseConstant { times, values },
            MatrixFn::Constant(Matrix::identity(n)),
            MatrixFn::Constant(Matrix::identity(n)),
        )
        .unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn transition_semigroup_and_inverse(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.gen_range(2..4);
            let sys = random_piecewise_system(&mut rng, n);
            let t0 = rng.gen_range(-1.0..0.5);
            let t1 = t0 + rng.gen_range(0.1..1.0);
            let t2 = t1 + rng.gen_range(0.1..1.0);
            let phi20 = state_transition(&sys, t2, t0).unwrap();
            let phi21 = state_transition(&sys, t2, t1).unwrap();
            let phi10 = state_transition(&sys, t1, t0).unwrap();
            prop_assert!(phi20.max_abs_diff(&phi21.matmul(&phi10)) < 1e-8);
            let phi01 = state_transition(&sys, t0, t1).unwrap();
            prop_assert!(phi10.matmul(&phi01).max_abs_diff(&Matrix::identity(n)) < 1e-8);
        }

        #[test]
        fn gramians_are_symmetric_psd(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.gen_range(2..4);
            let sys = random_piecewise_system(&mut rng, n);
            let (t0, t1) = (0.0, rng.gen_range(0.4..1.5));
            for w in [
                controllability_gramian(&sys, t1, t0).unwrap(),
                controllability_gramian(&sys, t0, t1).unwrap(),
                observability_gramian(&sys, t0, t1).unwrap(),
            ] {
                prop_assert!(w.asymmetry() < 1e-9);
                let (eigs, _) = jacobi_eigh(&w).unwrap();
                prop_assert!(eigs[0] > -1e-9);
            }
        }

        #[test]
        fn simulated_energy_matches_quadratic_cost(seed in 0u64..200) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.gen_range(2..4);
            let a = Matrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
            let sys = LinearSystem::time_invariant(
                a,
                Matrix::identity(n),
                Matrix::identity(n),
            )
            .unwrap()
            .with_steps_per_unit(500);
            let x0: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let x1: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let cost = min_energy_cost(&sys, &x0, &x1, 0.0, 1.0).unwrap();
            prop_assume!(cost > 1e-6);
            let law = min_energy_control(&sys, &x0, &x1, 0.0, 1.0).unwrap();
            let (sol, energy) = law.simulate(&x0).unwrap();
            let end_err = norm(&sub_vec(sol.final_state(), &x1));
            prop_assert!(end_err < 1e-4, "endpoint error {end_err}");
            prop_assert!((energy - cost).abs() / cost < 1e-3, "energy {energy} vs {cost}");
        }

        #[test]
        fn constant_a_transition_matches_series_exponential(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.gen_range(2..5);
            let a = Matrix::from_fn(n, n, |_, _| rng.gen_range(-1.5..1.5));
            let sys = LinearSystem::time_invariant(
                a.clone(),
                Matrix::identity(n),
                Matrix::identity(n),
            )
            .unwrap();
            let t = rng.gen_range(0.2..1.5);
            let phi = state_transition(&sys, t, 0.0).unwrap();
            prop_assert!(phi.max_abs_diff(&expm_reference(&a, t)) < 1e-8);
        }
    }
}
