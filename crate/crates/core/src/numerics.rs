//! Shared numerical kernels: dense matrices, fixed-step RK4 integration,
//! symmetric eigendecomposition with PSD matrix functions, composite
//! Simpson quadrature, and equality-constrained quadratic minimization.
//!
//! Everything here is deterministic and dependency-free. Matrices are
//! dense, row-major `f64`; there is no sparse storage and only symmetric
//! matrices are eigendecomposed (cyclic Jacobi).

use thiserror::Error;

/// Convergence threshold for the cyclic Jacobi sweep, applied to the
/// off-diagonal Frobenius norm relative to the matrix scale.
const JACOBI_TOL: f64 = 1e-12;

/// Maximum Jacobi sweeps before giving up.
const JACOBI_MAX_SWEEPS: usize = 100;

/// Absolute tolerance on `max |S - S^T|` for symmetry checks.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Eigenvalues above this (negative) bound are treated as zero by the
/// PSD matrix functions; anything below is a hard error.
pub const PSD_EIG_TOL: f64 = -1e-10;

#[derive(Debug, Clone, Error)]
pub enum NumericsError {
    #[error("matrix entries must be finite")]
    NonFiniteEntry,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite state during integration at t = {t}")]
    NonFiniteState { t: f64 },
    #[error("matrix is not symmetric (max asymmetry {asymmetry:.3e})")]
    NotSymmetric { asymmetry: f64 },
    #[error("matrix is not positive semidefinite (eigenvalue {eigenvalue:.3e})")]
    NotPsd { eigenvalue: f64 },
    #[error("KKT system is numerically singular (pivot {pivot:.3e})")]
    SingularKkt { pivot: f64 },
    #[error("linear system is numerically singular (pivot {pivot:.3e})")]
    Singular { pivot: f64 },
    #[error("eigensolver did not converge")]
    NoConvergence,
}

/// Dense row-major matrix of `f64` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Builds a matrix from row-major data, rejecting non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, NumericsError> {
        if data.len() != rows * cols {
            return Err(NumericsError::DimensionMismatch(format!(
                "expected {} entries for a {rows}x{cols} matrix, got {}",
                rows * cols,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(NumericsError::NonFiniteEntry);
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from nested rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, NumericsError> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(NumericsError::DimensionMismatch(
                "ragged rows".to_string(),
            ));
        }
        Self::new(r, c, rows.concat())
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn diag(entries: &[f64]) -> Self {
        let mut m = Self::zeros(entries.len(), entries.len());
        for (i, &v) in entries.iter().enumerate() {
            m.set(i, i, v);
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        assert!(
            data.iter().all(|v| v.is_finite()),
            "from_fn produced a non-finite entry"
        );
        Self { rows, cols, data }
    }

    /// Column vector (n x 1) from a slice.
    pub fn column(v: &[f64]) -> Self {
        Self::from_fn(v.len(), 1, |i, _| v[i])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(
            self.cols, other.rows,
            "matmul: {}x{} * {}x{}",
            self.rows, self.cols, other.rows, other.cols
        );
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other.get(k, j);
                }
            }
        }
        out
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, x.len(), "matvec dimension mismatch");
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// x^T M y for a square or rectangular M.
    pub fn quad_form(&self, x: &[f64], y: &[f64]) -> f64 {
        dot(x, &self.matvec(y))
    }

    pub fn add(&self, other: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Matrix::from_fn(self.rows, self.cols, |i, j| self.get(i, j) + other.get(i, j))
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Matrix::from_fn(self.rows, self.cols, |i, j| self.get(i, j) - other.get(i, j))
    }

    pub fn scaled(&self, s: f64) -> Matrix {
        Matrix::from_fn(self.rows, self.cols, |i, j| s * self.get(i, j))
    }

    pub fn trace(&self) -> f64 {
        assert!(self.is_square());
        (0..self.rows).map(|i| self.get(i, i)).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest entry of |self - other|.
    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Largest entry of |self - self^T|; zero for non-square input is not
    /// meaningful, so this asserts squareness.
    pub fn asymmetry(&self) -> f64 {
        assert!(self.is_square());
        let mut worst: f64 = 0.0;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }

    pub fn symmetrized(&self) -> Matrix {
        assert!(self.is_square());
        Matrix::from_fn(self.rows, self.cols, |i, j| {
            0.5 * (self.get(i, j) + self.get(j, i))
        })
    }

    /// Solves `self * x = b` by LU with partial pivoting.
    pub fn lu_solve(&self, b: &[f64]) -> Result<Vec<f64>, NumericsError> {
        let cols = self.lu_solve_multi(&Matrix::column(b))?;
        Ok((0..cols.rows).map(|i| cols.get(i, 0)).collect())
    }

    /// Solves `self * X = B` column-wise by LU with partial pivoting.
    pub fn lu_solve_multi(&self, b: &Matrix) -> Result<Matrix, NumericsError> {
        assert!(self.is_square(), "lu_solve requires a square matrix");
        assert_eq!(self.rows, b.rows, "lu_solve rhs dimension mismatch");
        let n = self.rows;
        let mut a = self.clone();
        let mut rhs = b.clone();
        let scale = self.max_abs().max(1.0);
        for k in 0..n {
            let (mut piv_row, mut piv_val) = (k, a.get(k, k).abs());
            for r in (k + 1)..n {
                let v = a.get(r, k).abs();
                if v > piv_val {
                    piv_row = r;
                    piv_val = v;
                }
            }
            if piv_val < 1e-12 * scale {
                return Err(NumericsError::Singular { pivot: piv_val });
            }
            if piv_row != k {
                for j in 0..n {
                    let tmp = a.get(k, j);
                    a.set(k, j, a.get(piv_row, j));
                    a.set(piv_row, j, tmp);
                }
                for j in 0..rhs.cols {
                    let tmp = rhs.get(k, j);
                    rhs.set(k, j, rhs.get(piv_row, j));
                    rhs.set(piv_row, j, tmp);
                }
            }
            let pivot = a.get(k, k);
            for r in (k + 1)..n {
                let factor = a.get(r, k) / pivot;
                if factor == 0.0 {
                    continue;
                }
                for j in k..n {
                    let v = a.get(r, j) - factor * a.get(k, j);
                    a.set(r, j, v);
                }
                for j in 0..rhs.cols {
                    let v = rhs.get(r, j) - factor * rhs.get(k, j);
                    rhs.set(r, j, v);
                }
            }
        }
        let mut x = Matrix::zeros(n, rhs.cols);
        for j in 0..rhs.cols {
            for i in (0..n).rev() {
                let mut acc = rhs.get(i, j);
                for k in (i + 1)..n {
                    acc -= a.get(i, k) * x.get(k, j);
                }
                x.set(i, j, acc / a.get(i, i));
            }
        }
        Ok(x)
    }

    pub fn inverse(&self) -> Result<Matrix, NumericsError> {
        self.lu_solve_multi(&Matrix::identity(self.rows))
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn sub_vec(a: &[f64], b: &[f64]) -> Vec<f64> {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn add_vec(a: &[f64], b: &[f64]) -> Vec<f64> {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
///
/// Returns eigenvalues in ascending order and the orthonormal matrix whose
/// columns are the matching eigenvectors, so `m = V diag(w) V^T`. The input
/// is symmetrized before decomposition.
pub fn jacobi_eigh(m: &Matrix) -> Result<(Vec<f64>, Matrix), NumericsError> {
    assert!(m.is_square(), "eigendecomposition requires a square matrix");
    let n = m.rows();
    let mut a = m.symmetrized();
    let mut v = Matrix::identity(n);
    if n == 1 {
        return Ok((vec![a.get(0, 0)], v));
    }
    let scale = a.frobenius_norm().max(1.0);
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += 2.0 * a.get(i, j) * a.get(i, j);
            }
        }
        if off.sqrt() <= JACOBI_TOL * scale {
            let mut pairs: Vec<(f64, usize)> =
                (0..n).map(|i| (a.get(i, i), i)).collect();
            pairs.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());
            let w: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let vs = Matrix::from_fn(n, n, |i, j| v.get(i, pairs[j].1));
            return Ok((w, vs));
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a.get(p, q);
                if apq.abs() <= f64::EPSILON * scale {
                    continue;
                }
                let theta = (a.get(q, q) - a.get(p, p)) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a.get(k, p);
                    let akq = a.get(k, q);
                    a.set(k, p, c * akp - s * akq);
                    a.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let apk = a.get(p, k);
                    let aqk = a.get(q, k);
                    a.set(p, k, c * apk - s * aqk);
                    a.set(q, k, s * apk + c * aqk);
                }
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }
    Err(NumericsError::NoConvergence)
}

fn check_symmetric_psd(s: &Matrix) -> Result<(Vec<f64>, Matrix), NumericsError> {
    assert!(s.is_square(), "PSD functions require a square matrix");
    let asymmetry = s.asymmetry();
    if asymmetry > SYMMETRY_TOL {
        return Err(NumericsError::NotSymmetric { asymmetry });
    }
    let (w, v) = jacobi_eigh(&s.symmetrized())?;
    if let Some(&lo) = w.first() {
        if lo < PSD_EIG_TOL {
            return Err(NumericsError::NotPsd { eigenvalue: lo });
        }
    }
    Ok((w, v))
}

fn spectral_map(
    w: &[f64],
    v: &Matrix,
    f: impl Fn(f64) -> f64,
) -> Matrix {
    let n = w.len();
    let fw: Vec<f64> = w.iter().map(|&x| f(x)).collect();
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let mut acc = 0.0;
            for k in 0..n {
                acc += v.get(i, k) * fw[k] * v.get(j, k);
            }
            out.set(i, j, acc);
        }
    }
    out.symmetrized()
}

/// Symmetric PSD square root: returns `R` with `R R = S`.
///
/// Eigenvalues in `[-1e-10, 0)` are clamped to zero; anything lower is a
/// [`NumericsError::NotPsd`] error.
pub fn psd_sqrt(s: &Matrix) -> Result<Matrix, NumericsError> {
    let (w, v) = check_symmetric_psd(s)?;
    Ok(spectral_map(&w, &v, |x| x.max(0.0).sqrt()))
}

/// Inverse of a symmetric positive definite matrix through its eigenbasis.
pub fn psd_inverse(s: &Matrix) -> Result<Matrix, NumericsError> {
    let (w, v) = check_symmetric_psd(s)?;
    let hi = w.last().copied().unwrap_or(0.0);
    let lo = w.first().copied().unwrap_or(0.0);
    if lo <= 1e-14 * hi.max(1.0) {
        return Err(NumericsError::Singular { pivot: lo });
    }
    Ok(spectral_map(&w, &v, |x| 1.0 / x))
}

/// Nearest-PSD projection: symmetrize, then clamp negative eigenvalues
/// to zero. Unlike [`psd_sqrt`] this never rejects, so it is the right
/// tool for covariances assembled from noisy arithmetic.
pub fn psd_project(s: &Matrix) -> Result<Matrix, NumericsError> {
    let (w, v) = jacobi_eigh(&s.symmetrized())?;
    Ok(spectral_map(&w, &v, |x| x.max(0.0)))
}

/// Inverse square root through the same eigenbasis as [`psd_sqrt`].
pub fn psd_inv_sqrt(s: &Matrix) -> Result<Matrix, NumericsError> {
    let (w, v) = check_symmetric_psd(s)?;
    let hi = w.last().copied().unwrap_or(0.0);
    let lo = w.first().copied().unwrap_or(0.0);
    if lo <= 1e-14 * hi.max(1.0) {
        return Err(NumericsError::Singular { pivot: lo });
    }
    Ok(spectral_map(&w, &v, |x| 1.0 / x.sqrt()))
}

/// Trajectory of a fixed-step integration: a strictly increasing time grid
/// and one state vector per grid time.
#[derive(Debug, Clone)]
pub struct OdeSolution {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

impl OdeSolution {
    pub fn final_state(&self) -> &[f64] {
        self.states.last().expect("solution has at least one node")
    }

    /// Linear interpolation between grid nodes, clamped to the span.
    pub fn interpolate(&self, t: f64) -> Vec<f64> {
        let times = &self.times;
        if t <= times[0] {
            return self.states[0].clone();
        }
        if t >= *times.last().unwrap() {
            return self.states.last().unwrap().clone();
        }
        let idx = match times.binary_search_by(|v| v.partial_cmp(&t).unwrap()) {
            Ok(i) => return self.states[i].clone(),
            Err(i) => i,
        };
        let (t0, t1) = (times[idx - 1], times[idx]);
        let alpha = (t - t0) / (t1 - t0);
        self.states[idx - 1]
            .iter()
            .zip(&self.states[idx])
            .map(|(a, b)| a + alpha * (b - a))
            .collect()
    }
}

/// Classic fixed-step RK4 over `[t0, t1]` with `steps` uniform steps.
pub fn integrate_ode<F>(
    mut rhs: F,
    x0: &[f64],
    t0: f64,
    t1: f64,
    steps: usize,
) -> Result<OdeSolution, NumericsError>
where
    F: FnMut(f64, &[f64]) -> Vec<f64>,
{
    assert!(steps >= 1, "integrate_ode requires at least one step");
    assert!(t0 <= t1, "integrate_ode requires t0 <= t1");
    let n = x0.len();
    let h = (t1 - t0) / steps as f64;
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    times.push(t0);
    states.push(x0.to_vec());
    let mut x = x0.to_vec();
    for k in 0..steps {
        let t = t0 + k as f64 * h;
        let k1 = rhs(t, &x);
        let mut tmp: Vec<f64> = (0..n).map(|i| x[i] + 0.5 * h * k1[i]).collect();
        let k2 = rhs(t + 0.5 * h, &tmp);
        for i in 0..n {
            tmp[i] = x[i] + 0.5 * h * k2[i];
        }
        let k3 = rhs(t + 0.5 * h, &tmp);
        for i in 0..n {
            tmp[i] = x[i] + h * k3[i];
        }
        let k4 = rhs(t + h, &tmp);
        for i in 0..n {
            x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        let t_next = if k + 1 == steps { t1 } else { t0 + (k + 1) as f64 * h };
        if x.iter().any(|v| !v.is_finite()) {
            return Err(NumericsError::NonFiniteState { t: t_next });
        }
        times.push(t_next);
        states.push(x.clone());
    }
    Ok(OdeSolution { times, states })
}

/// Composite Simpson quadrature of a matrix-valued integrand.
///
/// `intervals` is rounded up to the next even count.
pub fn simpson_matrix<F>(mut f: F, a: f64, b: f64, intervals: usize) -> Matrix
where
    F: FnMut(f64) -> Matrix,
{
    let m = intervals.max(2).next_multiple_of(2);
    let h = (b - a) / m as f64;
    let mut acc = f(a);
    for k in 1..m {
        let t = a + k as f64 * h;
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        acc = acc.add(&f(t).scaled(w));
    }
    acc = acc.add(&f(b));
    acc.scaled(h / 3.0)
}

/// Rank data from a pivoted row reduction.
#[derive(Debug, Clone)]
pub struct RankInfo {
    pub rank: usize,
    pub pivot_cols: Vec<usize>,
    /// One basis vector per free column, spanning the kernel.
    pub kernel_basis: Vec<Vec<f64>>,
}

/// Pivoted Gaussian elimination with a pivot threshold relative to the
/// largest entry of the input. Returns the rank, the pivot columns, and a
/// kernel basis read off the reduced echelon form.
pub fn row_echelon_rank(m: &Matrix, rel_tol: f64) -> RankInfo {
    let (rows, cols) = (m.rows(), m.cols());
    let mut r = m.clone();
    let threshold = rel_tol * m.max_abs().max(f64::MIN_POSITIVE);
    let mut pivot_cols = Vec::new();
    let mut pivot_row = 0usize;
    for col in 0..cols {
        if pivot_row >= rows {
            break;
        }
        let (mut best_row, mut best_val) = (pivot_row, r.get(pivot_row, col).abs());
        for i in (pivot_row + 1)..rows {
            let v = r.get(i, col).abs();
            if v > best_val {
                best_row = i;
                best_val = v;
            }
        }
        if best_val <= threshold {
            continue;
        }
        if best_row != pivot_row {
            for j in 0..cols {
                let tmp = r.get(pivot_row, j);
                r.set(pivot_row, j, r.get(best_row, j));
                r.set(best_row, j, tmp);
            }
        }
        let pivot = r.get(pivot_row, col);
        for j in 0..cols {
            r.set(pivot_row, j, r.get(pivot_row, j) / pivot);
        }
        for i in 0..rows {
            if i == pivot_row {
                continue;
            }
            let factor = r.get(i, col);
            if factor == 0.0 {
                continue;
            }
            for j in 0..cols {
                let v = r.get(i, j) - factor * r.get(pivot_row, j);
                r.set(i, j, v);
            }
        }
        pivot_cols.push(col);
        pivot_row += 1;
    }
    let rank = pivot_cols.len();
    let mut kernel_basis = Vec::new();
    for free in 0..cols {
        if pivot_cols.contains(&free) {
            continue;
        }
        let mut v = vec![0.0; cols];
        v[free] = 1.0;
        for (row, &pc) in pivot_cols.iter().enumerate() {
            v[pc] = -r.get(row, free);
        }
        kernel_basis.push(v);
    }
    RankInfo {
        rank,
        pivot_cols,
        kernel_basis,
    }
}

/// Minimizes `0.5 x^T Q x + q^T x` subject to `Aeq x = beq` by a direct
/// solve of the KKT system `[[Q, Aeq^T], [Aeq, 0]]`.
pub fn solve_equality_qp(
    q_mat: &Matrix,
    q_vec: &[f64],
    a_eq: &Matrix,
    b_eq: &[f64],
) -> Result<Vec<f64>, NumericsError> {
    let n = q_mat.rows();
    assert!(q_mat.is_square(), "Q must be square");
    assert_eq!(q_vec.len(), n, "q length must match Q");
    assert_eq!(a_eq.cols(), n, "Aeq column count must match Q");
    assert_eq!(b_eq.len(), a_eq.rows(), "beq length must match Aeq rows");
    let m = a_eq.rows();
    let dim = n + m;
    let mut kkt = Matrix::zeros(dim, dim);
    for i in 0..n {
        for j in 0..n {
            kkt.set(i, j, q_mat.get(i, j));
        }
    }
    for i in 0..m {
        for j in 0..n {
            kkt.set(n + i, j, a_eq.get(i, j));
            kkt.set(j, n + i, a_eq.get(i, j));
        }
    }
    let mut rhs = Vec::with_capacity(dim);
    rhs.extend(q_vec.iter().map(|v| -v));
    rhs.extend_from_slice(b_eq);
    let sol = kkt.lu_solve(&rhs).map_err(|e| match e {
        NumericsError::Singular { pivot } => NumericsError::SingularKkt { pivot },
        other => other,
    })?;
    Ok(sol[..n].to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mat(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn construction_rejects_non_finite() {
        assert!(matches!(
            Matrix::new(1, 2, vec![1.0, f64::NAN]),
            Err(NumericsError::NonFiniteEntry)
        ));
        assert!(Matrix::new(2, 2, vec![0.0; 3]).is_err());
    }

    #[test]
    fn zero_field_keeps_state_constant() {
        let sol = integrate_ode(|_, x| vec![0.0; x.len()], &[3.0, -1.5], 0.0, 2.0, 10).unwrap();
        assert_eq!(sol.final_state(), &[3.0, -1.5]);
    }

    #[test]
    fn exponential_growth_matches_closed_form() {
        let sol = integrate_ode(|_, x| vec![x[0]], &[1.0], 0.0, 1.0, 1000).unwrap();
        assert!((sol.final_state()[0] - std::f64::consts::E).abs() < 1e-9);
    }

    #[test]
    fn nilpotent_linear_field_matches_series() {
        // A = [[0,1],[0,0]], x0 = [0,1]: e^{At} = I + At, so x(1) = [1, 1].
        let sol = integrate_ode(|_, x| vec![x[1], 0.0], &[0.0, 1.0], 0.0, 1.0, 100).unwrap();
        assert!((sol.final_state()[0] - 1.0).abs() < 1e-9);
        assert!((sol.final_state()[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn rk4_error_shrinks_sixteen_fold_per_halving() {
        let err = |steps: usize| {
            let sol = integrate_ode(|_, x| vec![x[0]], &[1.0], 0.0, 1.0, steps).unwrap();
            (sol.final_state()[0] - std::f64::consts::E).abs()
        };
        let ratio = err(50) / err(100);
        assert!(
            (8.0..=32.0).contains(&ratio),
            "expected ~16x error reduction, got {ratio}"
        );
    }

    #[test]
    fn blowup_is_reported_as_non_finite() {
        let res = integrate_ode(|_, x| vec![x[0] * x[0]], &[1.0], 0.0, 5.0, 50);
        assert!(matches!(res, Err(NumericsError::NonFiniteState { .. })));
    }

    #[test]
    fn psd_sqrt_of_identity_is_identity() {
        let r = psd_sqrt(&Matrix::identity(3)).unwrap();
        assert!(r.max_abs_diff(&Matrix::identity(3)) < 1e-12);
    }

    #[test]
    fn psd_sqrt_of_diagonal() {
        let r = psd_sqrt(&Matrix::diag(&[4.0, 9.0])).unwrap();
        assert!(r.max_abs_diff(&Matrix::diag(&[2.0, 3.0])) < 1e-12);
    }

    #[test]
    fn psd_sqrt_reconstructs_random_gram_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let m = Matrix::from_fn(3, 3, |_, _| rng.gen_range(-1.0..1.0));
            let s = m.matmul(&m.transpose());
            let r = psd_sqrt(&s).unwrap();
            assert!(r.matmul(&r).sub(&s).frobenius_norm() < 1e-9);
            assert!(r.asymmetry() < 1e-10);
        }
    }

    #[test]
    fn psd_sqrt_rejects_asymmetric_and_indefinite() {
        let asym = mat(&[&[1.0, 0.5], &[0.0, 1.0]]);
        assert!(matches!(
            psd_sqrt(&asym),
            Err(NumericsError::NotSymmetric { .. })
        ));
        let indef = Matrix::diag(&[1.0, -0.5]);
        assert!(matches!(psd_sqrt(&indef), Err(NumericsError::NotPsd { .. })));
    }

    #[test]
    fn qp_symmetric_instance() {
        // minimize ||x||^2 subject to x1 + x2 = 1.
        let x = solve_equality_qp(
            &Matrix::identity(2).scaled(2.0),
            &[0.0, 0.0],
            &mat(&[&[1.0, 1.0]]),
            &[1.0],
        )
        .unwrap();
        assert!((x[0] - 0.5).abs() < 1e-12 && (x[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn qp_fully_constrained_returns_rhs() {
        let b = [0.3, -1.2, 4.0];
        let x = solve_equality_qp(
            &Matrix::identity(3),
            &[0.0; 3],
            &Matrix::identity(3),
            &b,
        )
        .unwrap();
        for (xi, bi) in x.iter().zip(&b) {
            assert!((xi - bi).abs() < 1e-12);
        }
    }

    #[test]
    fn qp_matches_projection_closed_form() {
        // Q = I, q = 0: minimizer is the least-norm solution
        // x = Aeq^T (Aeq Aeq^T)^{-1} beq.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let a = Matrix::from_fn(2, 4, |_, _| rng.gen_range(-1.0..1.0));
            let b: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let x = solve_equality_qp(&Matrix::identity(4), &[0.0; 4], &a, &b).unwrap();
            let gram = a.matmul(&a.transpose());
            let lam = gram.lu_solve(&b).unwrap();
            let expect = a.transpose().matvec(&lam);
            for (xi, ei) in x.iter().zip(&expect) {
                assert!((xi - ei).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn qp_reports_singular_kkt() {
        // Constraint matrix with a repeated row makes the KKT system singular.
        let a = mat(&[&[1.0, 1.0], &[1.0, 1.0]]);
        let res = solve_equality_qp(&Matrix::identity(2), &[0.0; 2], &a, &[1.0, 1.0]);
        assert!(matches!(res, Err(NumericsError::SingularKkt { .. })));
    }

    #[test]
    fn simpson_integrates_polynomials_exactly() {
        // Simpson is exact for cubics.
        let val = simpson_matrix(
            |t| Matrix::new(1, 1, vec![t * t * t - 2.0 * t]).unwrap(),
            0.0,
            2.0,
            2,
        );
        assert!((val.get(0, 0) - 0.0).abs() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn psd_sqrt_output_is_symmetric_psd(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.gen_range(1..5);
            let m = Matrix::from_fn(n, n, |_, _| rng.gen_range(-2.0..2.0));
            let s = m.matmul(&m.transpose());
            let r = psd_sqrt(&s).unwrap();
            prop_assert!(r.asymmetry() < 1e-10);
            let (w, _) = jacobi_eigh(&r).unwrap();
            prop_assert!(w[0] >= -1e-10);
        }

        #[test]
        fn qp_solution_is_feasible_and_stationary(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.gen_range(2..5);
            let m = rng.gen_range(1..n);
            let f = Matrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
            // Q = F F^T + I keeps the KKT system comfortably nonsingular.
            let q = f.matmul(&f.transpose()).add(&Matrix::identity(n));
            let qv: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let a = Matrix::from_fn(m, n, |_, _| rng.gen_range(-1.0..1.0));
            let b: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let x = solve_equality_qp(&q, &qv, &a, &b).unwrap();
            let feas = sub_vec(&a.matvec(&x), &b);
            prop_assert!(norm(&feas) < 1e-9);
            // Stationarity: Qx + q must lie in range(Aeq^T); recover the
            // multiplier by least squares and check the residual.
            let grad = add_vec(&q.matvec(&x), &qv);
            let gram = a.matmul(&a.transpose());
            let lam = gram.lu_solve(&a.matvec(&grad)).unwrap();
            let resid = sub_vec(&grad, &a.transpose().matvec(&lam));
            prop_assert!(norm(&resid) < 1e-8);
        }

        #[test]
        fn jacobi_recovers_spectrum_of_random_symmetric(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.gen_range(1..6);
            let m = Matrix::from_fn(n, n, |_, _| rng.gen_range(-3.0..3.0)).symmetrized();
            let (w, v) = jacobi_eigh(&m).unwrap();
            let recon = spectral_map(&w, &v, |x| x);
            prop_assert!(recon.max_abs_diff(&m) < 1e-9);
            // eigenvalues ascending
            for pair in w.windows(2) {
                prop_assert!(pair[0] <= pair[1] + 1e-12);
            }
        }
    }
}
