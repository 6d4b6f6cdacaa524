//! A minimal-time controllability measure for flow-driven ensembles.
//!
//! Members drift under an uncontrolled velocity field and can only be
//! actuated inside a control region `D`. The time for initial mass to
//! reach `D` forward in time and for target mass to reach it backward
//! defines two reach CDFs; the controllability measure is
//!
//! ```text
//! S(mu0, mu1) = sup_m { F^{-1}(m) + H^{-1}(1 - m) }
//! ```
//!
//! which is invariant under invertible linear changes of state
//! coordinates (transform atoms, region and field together).

use crate::measures::DiscreteMeasure;
use crate::numerics::{norm, sub_vec, Matrix};
use thiserror::Error;

/// Default RK4 step count for flow integration up to `t_max`.
pub const DEFAULT_FLOW_STEPS: usize = 10_000;

/// Bisection width for refining an entry time.
const HIT_REFINE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Error)]
pub enum CtrlMeasureError {
    #[error("flow integration produced a non-finite state at t = {t}")]
    NonFiniteState { t: f64 },
    #[error("CDF never attains mass {requested} (supremum {available})")]
    MassNotAttained { requested: f64, available: f64 },
    #[error("{count} atom(s) never reach the control region {direction} (first: atom {first})")]
    NotReachable {
        direction: &'static str,
        count: usize,
        first: usize,
    },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

/// Integration direction for the uncontrolled flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowDirection {
    Forward,
    Backward,
}

/// The uncontrolled velocity field, in a few built-in families.
#[derive(Debug, Clone)]
pub enum VectorField {
    Constant(Vec<f64>),
    /// `V(x) = M x + b`
    Affine { m: Matrix, b: Vec<f64> },
    /// Multilinear interpolation of samples on a rectilinear grid,
    /// clamped outside the grid's bounding box.
    GridSampled {
        grid: crate::measures::Grid,
        values: Vec<Vec<f64>>,
    },
    /// `V(x) = P V_inner(P^{-1} x)`: the push-forward of a field under an
    /// invertible linear change of coordinates.
    LinearImage {
        p: Matrix,
        p_inv: Matrix,
        inner: Box<VectorField>,
    },
}

impl VectorField {
    pub fn dim(&self) -> usize {
        match self {
            VectorField::Constant(v) => v.len(),
            VectorField::Affine { b, .. } => b.len(),
            VectorField::GridSampled { grid, .. } => grid.dim(),
            VectorField::LinearImage { p, .. } => p.rows(),
        }
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        match self {
            VectorField::Constant(v) => v.clone(),
            VectorField::Affine { m, b } => {
                let mut out = m.matvec(x);
                for (o, bi) in out.iter_mut().zip(b) {
                    *o += bi;
                }
                out
            }
            VectorField::GridSampled { grid, values } => {
                multilinear_interpolate(grid, values, x)
            }
            VectorField::LinearImage { p, p_inv, inner } => {
                p.matvec(&inner.eval(&p_inv.matvec(x)))
            }
        }
    }
}

fn multilinear_interpolate(
    grid: &crate::measures::Grid,
    values: &[Vec<f64>],
    x: &[f64],
) -> Vec<f64> {
    let axes = grid.axes();
    let n = axes.len();
    // per-axis cell index and weight, clamped to the grid box
    let mut cell = Vec::with_capacity(n);
    for (axis, &xi) in axes.iter().zip(x) {
        if axis.len() == 1 {
            cell.push((0usize, 0.0));
            continue;
        }
        let clamped = xi.clamp(axis[0], *axis.last().unwrap());
        let idx = match axis.binary_search_by(|v| v.partial_cmp(&clamped).unwrap()) {
            Ok(i) => i.min(axis.len() - 2),
            Err(i) => i.saturating_sub(1).min(axis.len() - 2),
        };
        let w = (clamped - axis[idx]) / (axis[idx + 1] - axis[idx]);
        cell.push((idx, w));
    }
    let value_dim = values[0].len();
    let mut out = vec![0.0; value_dim];
    for corner in 0..(1usize << n) {
        let mut weight = 1.0;
        let mut flat = 0usize;
        for (k, axis) in axes.iter().enumerate() {
            let (idx, w) = cell[k];
            let hi = (corner >> k) & 1 == 1;
            let node_idx = if hi { (idx + 1).min(axis.len() - 1) } else { idx };
            weight *= if hi { w } else { 1.0 - w };
            flat = flat * axis.len() + node_idx;
        }
        if weight == 0.0 {
            continue;
        }
        for (o, v) in out.iter_mut().zip(&values[flat]) {
            *o += weight * v;
        }
    }
    out
}

/// The control region: an open box or ball, optionally seen through an
/// invertible linear map (membership is tested on the pre-image).
#[derive(Debug, Clone)]
pub enum ControlRegion {
    /// Open axis-aligned box `(min_i, max_i)` per axis.
    Box { min: Vec<f64>, max: Vec<f64> },
    /// Open Euclidean ball.
    Ball { center: Vec<f64>, radius: f64 },
    /// The image `P(D)` of a region `D`: `x` belongs iff `P^{-1} x in D`.
    LinearImage {
        p_inv: Matrix,
        inner: Box<ControlRegion>,
    },
}

impl ControlRegion {
    pub fn contains(&self, x: &[f64]) -> bool {
        match self {
            ControlRegion::Box { min, max } => x
                .iter()
                .zip(min.iter().zip(max))
                .all(|(xi, (lo, hi))| *xi > *lo && *xi < *hi),
            ControlRegion::Ball { center, radius } => {
                norm(&sub_vec(x, center)) < *radius
            }
            ControlRegion::LinearImage { p_inv, inner } => {
                inner.contains(&p_inv.matvec(x))
            }
        }
    }
}

/// First entry time of the flow through `x` into the region, integrated
/// by fixed-step RK4 and refined by bisection on the entry step; `None`
/// when the flow has not entered by `t_max`.
pub fn hitting_time(
    field: &VectorField,
    region: &ControlRegion,
    x: &[f64],
    direction: FlowDirection,
    t_max: f64,
) -> Result<Option<f64>, CtrlMeasureError> {
    hitting_time_with_steps(field, region, x, direction, t_max, DEFAULT_FLOW_STEPS)
}

pub fn hitting_time_with_steps(
    field: &VectorField,
    region: &ControlRegion,
    x: &[f64],
    direction: FlowDirection,
    t_max: f64,
    steps: usize,
) -> Result<Option<f64>, CtrlMeasureError> {
    assert!(t_max > 0.0, "hitting_time requires a positive horizon");
    assert!(steps >= 1);
    if region.contains(x) {
        return Ok(Some(0.0));
    }
    let sign = match direction {
        FlowDirection::Forward => 1.0,
        FlowDirection::Backward => -1.0,
    };
    let n = x.len();
    let h = t_max / steps as f64;
    let rk4 = |state: &[f64], dt: f64| -> Vec<f64> {
        let k1 = field.eval(state);
        let mid1: Vec<f64> = (0..n).map(|i| state[i] + 0.5 * dt * sign * k1[i]).collect();
        let k2 = field.eval(&mid1);
        let mid2: Vec<f64> = (0..n).map(|i| state[i] + 0.5 * dt * sign * k2[i]).collect();
        let k3 = field.eval(&mid2);
        let end: Vec<f64> = (0..n).map(|i| state[i] + dt * sign * k3[i]).collect();
        let k4 = field.eval(&end);
        (0..n)
            .map(|i| state[i] + dt * sign / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
            .collect()
    };
    let mut state = x.to_vec();
    for step in 0..steps {
        let t_prev = step as f64 * h;
        let next = rk4(&state, h);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(CtrlMeasureError::NonFiniteState { t: t_prev + h });
        }
        if region.contains(&next) {
            // refine the crossing inside [t_prev, t_prev + h]
            let (mut lo, mut hi) = (0.0f64, h);
            while hi - lo > HIT_REFINE_TOL {
                let mid = 0.5 * (lo + hi);
                let probe = rk4(&state, mid);
                if region.contains(&probe) {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            return Ok(Some(t_prev + 0.5 * (lo + hi)));
        }
        state = next;
    }
    Ok(None)
}

/// Cumulative reached mass over time: a right-continuous step function
/// with one step per reached atom (unreached atoms never count).
#[derive(Debug, Clone)]
pub struct ReachCdf {
    /// sorted hit times
    times: Vec<f64>,
    /// cumulative mass at each hit time
    cumulative: Vec<f64>,
    /// indices of atoms that never reached the region
    unreached: Vec<usize>,
}

impl ReachCdf {
    pub fn value_at(&self, t: f64) -> f64 {
        match self
            .times
            .binary_search_by(|v| v.partial_cmp(&t).unwrap())
        {
            Ok(mut i) => {
                // right-continuity across equal hit times
                while i + 1 < self.times.len() && self.times[i + 1] <= t {
                    i += 1;
                }
                self.cumulative[i]
            }
            Err(0) => 0.0,
            Err(i) => self.cumulative[i - 1],
        }
    }

    /// Total mass that ever reaches the region.
    pub fn sup_mass(&self) -> f64 {
        self.cumulative.last().copied().unwrap_or(0.0)
    }

    pub fn unreached_atoms(&self) -> &[usize] {
        &self.unreached
    }

    /// Step times paired with cumulative masses.
    pub fn steps(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.times.iter().copied().zip(self.cumulative.iter().copied())
    }

    /// Generalized inverse `inf { t : F(t) >= m }`; zero mass maps to 0.
    pub fn quantile(&self, m: f64) -> Result<f64, CtrlMeasureError> {
        assert!((0.0..=1.0).contains(&m), "mass must lie in [0, 1]");
        if m <= 0.0 {
            return Ok(0.0);
        }
        let target = m - 1e-12;
        for (t, c) in self.times.iter().zip(&self.cumulative) {
            if *c >= target {
                return Ok(*t);
            }
        }
        Err(CtrlMeasureError::MassNotAttained {
            requested: m,
            available: self.sup_mass(),
        })
    }
}

/// Reach CDF of a discrete measure under the flow.
pub fn reach_cdf(
    field: &VectorField,
    region: &ControlRegion,
    mu: &DiscreteMeasure,
    direction: FlowDirection,
    t_max: f64,
) -> Result<ReachCdf, CtrlMeasureError> {
    if field.dim() != mu.dim() {
        return Err(CtrlMeasureError::DimensionMismatch(format!(
            "field dimension {} vs measure dimension {}",
            field.dim(),
            mu.dim()
        )));
    }
    let mut hits: Vec<(f64, f64)> = Vec::new();
    let mut unreached = Vec::new();
    for (idx, (atom, &w)) in mu.atoms().iter().zip(mu.weights()).enumerate() {
        match hitting_time(field, region, atom, direction, t_max)? {
            Some(t) => hits.push((t, w)),
            None => unreached.push(idx),
        }
    }
    hits.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut times = Vec::with_capacity(hits.len());
    let mut cumulative = Vec::with_capacity(hits.len());
    let mut acc = 0.0;
    for (t, w) in hits {
        acc += w;
        times.push(t);
        cumulative.push(acc);
    }
    assert!(
        cumulative.windows(2).all(|w| w[0] <= w[1]),
        "reach CDF must be nondecreasing"
    );
    Ok(ReachCdf {
        times,
        cumulative,
        unreached,
    })
}

/// The controllability measure and its cross-checks.
#[derive(Debug, Clone)]
pub struct CtrlMeasureReport {
    /// `S = sup_m F^{-1}(m) + H^{-1}(1-m)`, evaluated exactly.
    pub s: f64,
    pub forward: ReachCdf,
    pub backward: ReachCdf,
    /// `max_i |t0_i + t1_i|` for the declared pairing (atom order), when
    /// the two measures have equal atom counts.
    pub paired_max: Option<f64>,
    /// Whether the paired form agrees with `S` within 1e-6.
    pub paired_agrees: Option<bool>,
}

/// Computes `S(mu0, mu1)`: forward reach of the initial mass and
/// backward reach of the target mass, combined through the quantile sup.
/// Every atom must reach the region within `t_max`.
///
/// The sup over the mass level is piecewise constant, so it is evaluated
/// exactly at the CDF breakpoints and between them (interval values are
/// attained on open intervals).
pub fn controllability_measure(
    field: &VectorField,
    region: &ControlRegion,
    mu0: &DiscreteMeasure,
    mu1: &DiscreteMeasure,
    t_max: f64,
) -> Result<CtrlMeasureReport, CtrlMeasureError> {
    let forward = reach_cdf(field, region, mu0, FlowDirection::Forward, t_max)?;
    if !forward.unreached.is_empty() {
        return Err(CtrlMeasureError::NotReachable {
            direction: "forward",
            count: forward.unreached.len(),
            first: forward.unreached[0],
        });
    }
    let backward = reach_cdf(field, region, mu1, FlowDirection::Backward, t_max)?;
    if !backward.unreached.is_empty() {
        return Err(CtrlMeasureError::NotReachable {
            direction: "backward",
            count: backward.unreached.len(),
            first: backward.unreached[0],
        });
    }
    let s = sup_over_mass_levels(&forward, &backward)?;
    let (paired_max, paired_agrees) = if mu0.len() == mu1.len() {
        let mut worst: f64 = 0.0;
        for (a0, a1) in mu0.atoms().iter().zip(mu1.atoms()) {
            let t0 = hitting_time(field, region, a0, FlowDirection::Forward, t_max)?
                .expect("forward reach verified above");
            let t1 = hitting_time(field, region, a1, FlowDirection::Backward, t_max)?
                .expect("backward reach verified above");
            worst = worst.max((t0 + t1).abs());
        }
        (Some(worst), Some((worst - s).abs() <= 1e-6))
    } else {
        (None, None)
    };
    Ok(CtrlMeasureReport {
        s,
        forward,
        backward,
        paired_max,
        paired_agrees,
    })
}

fn sup_over_mass_levels(
    forward: &ReachCdf,
    backward: &ReachCdf,
) -> Result<f64, CtrlMeasureError> {
    let mut levels = vec![0.0, 1.0];
    levels.extend(forward.cumulative.iter().copied());
    levels.extend(backward.cumulative.iter().map(|c| 1.0 - c));
    levels.retain(|m| (0.0..=1.0).contains(m));
    levels.sort_by(|a, b| a.partial_cmp(b).unwrap());
    levels.dedup_by(|a, b| (*a - *b).abs() < 1e-15);
    // breakpoints plus open-interval representatives
    let mut candidates = levels.clone();
    for pair in levels.windows(2) {
        candidates.push(0.5 * (pair[0] + pair[1]));
    }
    let mut best = f64::NEG_INFINITY;
    for m in candidates {
        let f = forward.quantile(m)?;
        let h = backward.quantile(1.0 - m)?;
        best = best.max(f + h);
    }
    Ok(best)
}
