//! Probability-measure containers: discrete measures with weighted atoms,
//! Gaussian measures, rectilinear grids, linear push-forwards, grid
//! discretization of Gaussians, and moment fitting.

use crate::numerics::{self, jacobi_eigh, norm, sub_vec, Matrix, NumericsError};
use thiserror::Error;

/// Atoms closer than this (Euclidean) are merged on construction.
pub const ATOM_MERGE_TOL: f64 = 1e-12;

/// Weights must sum to one within this tolerance before renormalization.
pub const WEIGHT_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Error)]
pub enum MeasureError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("a discrete measure needs at least one atom")]
    Empty,
    #[error("weights must be nonnegative (got {0})")]
    NegativeWeight(f64),
    #[error("weights must sum to 1 within {WEIGHT_SUM_TOL:.0e} (sum = {0})")]
    NotNormalized(f64),
    #[error("all grid densities underflowed to zero mass")]
    ZeroMass,
    #[error("grid breakpoints must be strictly increasing")]
    UnorderedGrid,
}

/// A finitely supported probability measure: weighted atoms in `R^n`.
///
/// Construction merges atoms that coincide within [`ATOM_MERGE_TOL`] and
/// rescales weights to sum to exactly one.
#[derive(Debug, Clone)]
pub struct DiscreteMeasure {
    atoms: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl DiscreteMeasure {
    pub fn new(atoms: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self, MeasureError> {
        if atoms.is_empty() {
            return Err(MeasureError::Empty);
        }
        if atoms.len() != weights.len() {
            return Err(MeasureError::DimensionMismatch(format!(
                "{} atoms vs {} weights",
                atoms.len(),
                weights.len()
            )));
        }
        let dim = atoms[0].len();
        if atoms.iter().any(|a| a.len() != dim) {
            return Err(MeasureError::DimensionMismatch(
                "atoms have inconsistent dimensions".to_string(),
            ));
        }
        if atoms.iter().flatten().any(|v| !v.is_finite()) {
            return Err(MeasureError::Numerics(NumericsError::NonFiniteEntry));
        }
        if let Some(&w) = weights.iter().find(|w| **w < 0.0 || !w.is_finite()) {
            return Err(MeasureError::NegativeWeight(w));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(MeasureError::NotNormalized(sum));
        }
        Ok(Self::merged(atoms, weights, sum))
    }

    /// Builds from nonnegative masses of any positive total, rescaling.
    pub fn from_masses(atoms: Vec<Vec<f64>>, masses: Vec<f64>) -> Result<Self, MeasureError> {
        if atoms.is_empty() {
            return Err(MeasureError::Empty);
        }
        if let Some(&w) = masses.iter().find(|w| **w < 0.0 || !w.is_finite()) {
            return Err(MeasureError::NegativeWeight(w));
        }
        let sum: f64 = masses.iter().sum();
        if sum <= 0.0 {
            return Err(MeasureError::ZeroMass);
        }
        let scaled = masses.iter().map(|w| w / sum).collect();
        Self::new(atoms, scaled)
    }

    fn merged(atoms: Vec<Vec<f64>>, weights: Vec<f64>, sum: f64) -> Self {
        let mut out_atoms: Vec<Vec<f64>> = Vec::with_capacity(atoms.len());
        let mut out_weights: Vec<f64> = Vec::with_capacity(atoms.len());
        for (atom, w) in atoms.into_iter().zip(weights) {
            let hit = out_atoms
                .iter()
                .position(|a| norm(&sub_vec(a, &atom)) <= ATOM_MERGE_TOL);
            match hit {
                Some(i) => out_weights[i] += w / sum,
                None => {
                    out_atoms.push(atom);
                    out_weights.push(w / sum);
                }
            }
        }
        Self {
            atoms: out_atoms,
            weights: out_weights,
        }
    }

    /// Point mass at `x`.
    pub fn dirac(x: Vec<f64>) -> Self {
        Self {
            atoms: vec![x],
            weights: vec![1.0],
        }
    }

    /// Uniform weights over the given atoms.
    pub fn uniform(atoms: Vec<Vec<f64>>) -> Result<Self, MeasureError> {
        let n = atoms.len();
        Self::new(atoms, vec![1.0 / n as f64; n])
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.atoms[0].len()
    }

    pub fn atoms(&self) -> &[Vec<f64>] {
        &self.atoms
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// A Gaussian measure `N(mean, covariance)` with symmetric PSD covariance.
#[derive(Debug, Clone)]
pub struct GaussianMeasure {
    mean: Vec<f64>,
    covariance: Matrix,
}

impl GaussianMeasure {
    pub fn new(mean: Vec<f64>, covariance: Matrix) -> Result<Self, MeasureError> {
        if covariance.rows() != mean.len() || covariance.cols() != mean.len() {
            return Err(MeasureError::DimensionMismatch(format!(
                "covariance must be {0}x{0}",
                mean.len()
            )));
        }
        let asymmetry = covariance.asymmetry();
        if asymmetry > numerics::SYMMETRY_TOL {
            return Err(MeasureError::Numerics(NumericsError::NotSymmetric {
                asymmetry,
            }));
        }
        let sym = covariance.symmetrized();
        let (eigs, _) = jacobi_eigh(&sym)?;
        if eigs[0] < numerics::PSD_EIG_TOL {
            return Err(MeasureError::Numerics(NumericsError::NotPsd {
                eigenvalue: eigs[0],
            }));
        }
        Ok(Self {
            mean,
            covariance: sym,
        })
    }

    /// Scalar Gaussian from mean and variance.
    pub fn scalar(mean: f64, variance: f64) -> Result<Self, MeasureError> {
        Self::new(vec![mean], Matrix::new(1, 1, vec![variance])?)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn covariance(&self) -> &Matrix {
        &self.covariance
    }
}

/// A rectilinear grid: strictly increasing breakpoints per axis.
///
/// Nodes are enumerated lexicographically over axis indices, the last
/// axis varying fastest.
#[derive(Debug, Clone)]
pub struct Grid {
    axes: Vec<Vec<f64>>,
}

impl Grid {
    pub fn new(axes: Vec<Vec<f64>>) -> Result<Self, MeasureError> {
        if axes.is_empty() || axes.iter().any(Vec::is_empty) {
            return Err(MeasureError::Empty);
        }
        for axis in &axes {
            if axis.windows(2).any(|w| w[0] >= w[1]) {
                return Err(MeasureError::UnorderedGrid);
            }
        }
        Ok(Self { axes })
    }

    /// Uniform grid with `nodes[k]` points spanning `[min[k], max[k]]`.
    pub fn uniform(min: &[f64], max: &[f64], nodes: &[usize]) -> Result<Self, MeasureError> {
        if min.len() != max.len() || min.len() != nodes.len() {
            return Err(MeasureError::DimensionMismatch(
                "min/max/nodes lengths differ".to_string(),
            ));
        }
        let axes = min
            .iter()
            .zip(max)
            .zip(nodes)
            .map(|((&lo, &hi), &count)| {
                if count == 1 {
                    return vec![0.5 * (lo + hi)];
                }
                (0..count)
                    .map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64)
                    .collect()
            })
            .collect();
        Self::new(axes)
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn axes(&self) -> &[Vec<f64>] {
        &self.axes
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(Vec::len).product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Node coordinates for a flat lexicographic index.
    pub fn node(&self, mut flat: usize) -> Vec<f64> {
        let mut idx = vec![0usize; self.axes.len()];
        for (k, axis) in self.axes.iter().enumerate().rev() {
            idx[k] = flat % axis.len();
            flat /= axis.len();
        }
        idx.iter()
            .zip(&self.axes)
            .map(|(&i, axis)| axis[i])
            .collect()
    }

    /// Per-node cell measure: product of half-neighbor widths per axis.
    fn cell_volume(&self, mut flat: usize) -> f64 {
        let mut vol = 1.0;
        for axis in self.axes.iter().rev() {
            let i = flat % axis.len();
            flat /= axis.len();
            let d = axis.len();
            let w = if d == 1 {
                1.0
            } else {
                let lo = if i == 0 { axis[0] } else { axis[i - 1] };
                let hi = if i + 1 == d { axis[d - 1] } else { axis[i + 1] };
                0.5 * (hi - lo)
            };
            vol *= w;
        }
        vol
    }

    pub fn nodes(&self) -> impl Iterator<Item = Vec<f64>> + '_ {
        (0..self.len()).map(|i| self.node(i))
    }
}

/// Push-forward of a discrete measure under the linear map `L`.
/// Colliding images are merged with summed weights.
pub fn pushforward_linear(
    mu: &DiscreteMeasure,
    l: &Matrix,
) -> Result<DiscreteMeasure, MeasureError> {
    if l.cols() != mu.dim() {
        return Err(MeasureError::DimensionMismatch(format!(
            "map expects dimension {}, measure has {}",
            l.cols(),
            mu.dim()
        )));
    }
    let atoms = mu.atoms.iter().map(|a| l.matvec(a)).collect();
    Ok(DiscreteMeasure::merged(atoms, mu.weights.clone(), 1.0))
}

/// Push-forward of a Gaussian under `L`: `N(L m, L S L^T)`.
pub fn gaussian_pushforward(
    g: &GaussianMeasure,
    l: &Matrix,
) -> Result<GaussianMeasure, MeasureError> {
    if l.cols() != g.dim() {
        return Err(MeasureError::DimensionMismatch(format!(
            "map expects dimension {}, measure has {}",
            l.cols(),
            g.dim()
        )));
    }
    let mean = l.matvec(&g.mean);
    let cov = l.matmul(&g.covariance).matmul(&l.transpose());
    // tiny asymmetry from the sandwich product is numerical noise
    GaussianMeasure::new(mean, cov.symmetrized())
}

/// Discretizes a Gaussian onto grid nodes: weight proportional to the
/// density at the node times the node's cell volume, renormalized.
pub fn grid_discretize(g: &GaussianMeasure, grid: &Grid) -> Result<DiscreteMeasure, MeasureError> {
    if grid.dim() != g.dim() {
        return Err(MeasureError::DimensionMismatch(format!(
            "grid dimension {} vs measure dimension {}",
            grid.dim(),
            g.dim()
        )));
    }
    let (eigs, vecs) = jacobi_eigh(g.covariance())?;
    let top = eigs.last().copied().unwrap_or(0.0);
    if top <= 0.0 {
        return Err(MeasureError::ZeroMass);
    }
    // Quadratic form through the eigenbasis with tiny eigenvalues floored,
    // so near-degenerate covariances still yield usable relative densities.
    let floor = top * 1e-14;
    let n = g.dim();
    let log_density = |x: &[f64]| -> f64 {
        let d = sub_vec(x, g.mean());
        let mut q = 0.0;
        for k in 0..n {
            let mut proj = 0.0;
            for i in 0..n {
                proj += vecs.get(i, k) * d[i];
            }
            q += proj * proj / eigs[k].max(floor);
        }
        -0.5 * q
    };
    let mut atoms = Vec::with_capacity(grid.len());
    let mut masses = Vec::with_capacity(grid.len());
    let mut peak = f64::NEG_INFINITY;
    let logs: Vec<f64> = (0..grid.len())
        .map(|i| {
            let node = grid.node(i);
            let ld = log_density(&node);
            atoms.push(node);
            peak = peak.max(ld);
            ld
        })
        .collect();
    if !peak.is_finite() {
        return Err(MeasureError::ZeroMass);
    }
    for (i, ld) in logs.iter().enumerate() {
        masses.push((ld - peak).exp() * grid.cell_volume(i));
    }
    let total: f64 = masses.iter().sum();
    if total <= 0.0 {
        return Err(MeasureError::ZeroMass);
    }
    DiscreteMeasure::from_masses(atoms, masses)
}

/// Moment fit: weighted mean and weighted second central moment, projected
/// to the PSD cone.
pub fn gaussian_fit(mu: &DiscreteMeasure) -> GaussianMeasure {
    let n = mu.dim();
    let mut mean = vec![0.0; n];
    for (atom, w) in mu.atoms.iter().zip(&mu.weights) {
        for i in 0..n {
            mean[i] += w * atom[i];
        }
    }
    let mut cov = Matrix::zeros(n, n);
    for (atom, w) in mu.atoms.iter().zip(&mu.weights) {
        let d = sub_vec(atom, &mean);
        for i in 0..n {
            for j in 0..n {
                cov.set(i, j, cov.get(i, j) + w * d[i] * d[j]);
            }
        }
    }
    let cov = numerics::psd_project(&cov).expect("moment matrix is finite and symmetric");
    GaussianMeasure {
        mean,
        covariance: cov,
    }
}
