//! Dense symmetric linear algebra for small matrices.
//!
//! Everything here works in `f64` on row-major `n x n` buffers. The
//! eigendecomposition is a cyclic Jacobi iteration followed by a descending
//! sort and a deterministic column-sign convention, so identical inputs give
//! bit-identical outputs on one platform. Matrix functions (`exp`, `log`,
//! square roots, eigenvalue clamps) are all built on that decomposition.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

/// Eigenvalue gaps below this are treated as degenerate.
pub const DEGENERATE_GAP: f64 = 1e-6;

/// Default floor used by [`clamp_eigs`].
pub const DEFAULT_EIG_FLOOR: f64 = 1e-8;

/// Largest eigenvalue magnitude accepted by [`spd_exp`].
pub const EXP_LIMIT: f64 = 700.0;

const MAX_SWEEPS: usize = 30;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix contains NaN or infinite entries")]
    NonFinite,
    #[error("Jacobi iteration did not converge within {sweeps} sweeps")]
    NoConvergence { sweeps: usize },
    #[error("eigenvalue {value} outside the exponential's safe range (|x| <= {EXP_LIMIT})")]
    Overflow { value: f64 },
    #[error("matrix is not positive definite (smallest eigenvalue {min_eig})")]
    NotPositiveDefinite { min_eig: f64 },
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("matrix is rank deficient even after regularization")]
    RankDeficient,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// A real symmetric matrix. Construction symmetrizes as `(A + A^T) / 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    /// Builds a symmetric matrix from a row-major buffer, symmetrizing it.
    pub fn new(n: usize, data: Vec<f64>) -> Result<Self, LinalgError> {
        if n == 0 {
            return Err(LinalgError::InvalidArgument("dimension must be positive".into()));
        }
        if data.len() != n * n {
            return Err(LinalgError::DimensionMismatch { left: n * n, right: data.len() });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(LinalgError::NonFinite);
        }
        let mut data = data;
        symmetrize_in_place(n, &mut data);
        Ok(Self { n, data })
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self, LinalgError> {
        let data = (0..n * n).map(|k| f(k / n, k % n)).collect();
        Self::new(n, data)
    }

    pub fn zeros(n: usize) -> Self {
        Self { n, data: vec![0.0; n * n] }
    }

    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Self { n, data }
    }

    pub fn from_diag(diag: &[f64]) -> Result<Self, LinalgError> {
        let n = diag.len();
        Self::from_fn(n, |i, j| if i == j { diag[i] } else { 0.0 })
    }

    /// Already-symmetric buffer; skips validation.
    pub(crate) fn from_raw(n: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), n * n);
        Self { n, data }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn frobenius_norm(&self) -> f64 {
        frobenius(&self.data)
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    pub fn add(&self, other: &SymMatrix) -> Result<SymMatrix, LinalgError> {
        check_dims(self.n, other.n)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Ok(Self::from_raw(self.n, data))
    }

    pub fn sub(&self, other: &SymMatrix) -> Result<SymMatrix, LinalgError> {
        check_dims(self.n, other.n)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Ok(Self::from_raw(self.n, data))
    }

    pub fn scale(&self, c: f64) -> SymMatrix {
        Self::from_raw(self.n, self.data.iter().map(|v| v * c).collect())
    }

    /// Frobenius distance to another matrix of the same size.
    pub fn distance_to(&self, other: &SymMatrix) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

/// A symmetric positive definite matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix(SymMatrix);

impl SpdMatrix {
    /// Validates positive definiteness by eigendecomposition.
    pub fn new(sym: SymMatrix) -> Result<Self, LinalgError> {
        let eig = sym_eig(&sym)?;
        let min = eig.min_value();
        if min <= 0.0 {
            return Err(LinalgError::NotPositiveDefinite { min_eig: min });
        }
        Ok(Self(sym))
    }

    pub fn identity(n: usize) -> Self {
        Self(SymMatrix::identity(n))
    }

    pub fn from_diag(diag: &[f64]) -> Result<Self, LinalgError> {
        Self::new(SymMatrix::from_diag(diag)?)
    }

    #[cfg(test)]
    pub(crate) fn from_sym_unchecked(sym: SymMatrix) -> Self {
        Self(sym)
    }

    pub fn dim(&self) -> usize {
        self.0.dim()
    }

    pub fn as_sym(&self) -> &SymMatrix {
        &self.0
    }

    pub fn into_sym(self) -> SymMatrix {
        self.0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0.get(i, j)
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn min_eigenvalue(&self) -> Result<f64, LinalgError> {
        Ok(sym_eig(&self.0)?.min_value())
    }
}

/// `S = U diag(values) U^T` with eigenvalues sorted descending.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenDecomposition {
    n: usize,
    /// Row-major; column `j` is the eigenvector for `values[j]`.
    vectors: Vec<f64>,
    values: Vec<f64>,
}

impl EigenDecomposition {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Row-major eigenvector matrix `U`.
    pub fn vectors(&self) -> &[f64] {
        &self.vectors
    }

    pub fn vector_entry(&self, row: usize, col: usize) -> f64 {
        self.vectors[row * self.n + col]
    }

    pub fn min_value(&self) -> f64 {
        self.values[self.n - 1]
    }

    pub fn max_value(&self) -> f64 {
        self.values[0]
    }

    /// `U diag(f(lambda)) U^T`.
    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> SymMatrix {
        let fl: Vec<f64> = self.values.iter().map(|&l| f(l)).collect();
        SymMatrix::from_raw(self.n, reconstruct(self.n, &self.vectors, &fl))
    }

    /// Smallest gap between consecutive sorted eigenvalues (infinite for n = 1).
    pub fn min_gap(&self) -> f64 {
        self.values
            .windows(2)
            .map(|w| w[0] - w[1])
            .fold(f64::INFINITY, f64::min)
    }
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
pub fn sym_eig(s: &SymMatrix) -> Result<EigenDecomposition, LinalgError> {
    eig_slice(s.n, &s.data)
}

/// Eigendecomposition of a row-major buffer assumed symmetric.
pub(crate) fn eig_slice(n: usize, data: &[f64]) -> Result<EigenDecomposition, LinalgError> {
    if data.iter().any(|v| !v.is_finite()) {
        return Err(LinalgError::NonFinite);
    }
    let mut a = data.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    jacobi(n, &mut a, &mut v)?;

    let raw: Vec<f64> = (0..n).map(|i| a[i * n + i]).collect();
    let mut order: Vec<usize> = (0..n).collect();
    // stable: equal eigenvalues keep their Jacobi order
    order.sort_by(|&i, &j| raw[j].total_cmp(&raw[i]));

    let mut vectors = vec![0.0; n * n];
    let mut values = Vec::with_capacity(n);
    for (col, &src) in order.iter().enumerate() {
        values.push(raw[src]);
        let max_abs = (0..n).map(|r| v[r * n + src].abs()).fold(0.0, f64::max);
        let pivot = (0..n)
            .find(|&r| v[r * n + src].abs() >= max_abs * (1.0 - 1e-10))
            .unwrap_or(0);
        let sign = if v[pivot * n + src] < 0.0 { -1.0 } else { 1.0 };
        for r in 0..n {
            vectors[r * n + col] = sign * v[r * n + src];
        }
    }
    Ok(EigenDecomposition { n, vectors, values })
}

fn jacobi(n: usize, a: &mut [f64], v: &mut [f64]) -> Result<(), LinalgError> {
    for sweep in 0..MAX_SWEEPS {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[p * n + q] * a[p * n + q];
            }
        }
        if off == 0.0 {
            return Ok(());
        }
        for p in 0..n.saturating_sub(1) {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let g = 100.0 * apq.abs();
                if sweep > 3 && app.abs() + g == app.abs() && aqq.abs() + g == aqq.abs() {
                    a[p * n + q] = 0.0;
                    a[q * n + p] = 0.0;
                    continue;
                }
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta.abs() > 1e150 {
                    0.5 / theta
                } else {
                    let t = 1.0 / (theta.abs() + (theta * theta + 1.0).sqrt());
                    if theta < 0.0 {
                        -t
                    } else {
                        t
                    }
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                a[p * n + p] = app - t * apq;
                a[q * n + q] = aqq + t * apq;
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut off = 0.0;
    for p in 0..n {
        for q in (p + 1)..n {
            off += a[p * n + q] * a[p * n + q];
        }
    }
    if off == 0.0 {
        Ok(())
    } else {
        Err(LinalgError::NoConvergence { sweeps: MAX_SWEEPS })
    }
}

/// Adds symmetric Gaussian noise `(N + N^T)/2` when some eigenvalue gap is
/// below [`DEGENERATE_GAP`]; otherwise returns the input unchanged.
pub fn jitter_if_degenerate<R: Rng + ?Sized>(
    s: &SymMatrix,
    sigma: f64,
    rng: &mut R,
) -> Result<SymMatrix, LinalgError> {
    if !(sigma >= 0.0) {
        return Err(LinalgError::InvalidArgument(format!("sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(s.clone());
    }
    let eig = sym_eig(s)?;
    if eig.min_gap() >= DEGENERATE_GAP {
        return Ok(s.clone());
    }
    let n = s.n;
    let normal = Normal::new(0.0, sigma).map_err(|e| LinalgError::InvalidArgument(e.to_string()))?;
    let noise: Vec<f64> = (0..n * n).map(|_| normal.sample(rng)).collect();
    let mut data = s.data.clone();
    for i in 0..n {
        for j in 0..n {
            data[i * n + j] += 0.5 * (noise[i * n + j] + noise[j * n + i]);
        }
    }
    Ok(SymMatrix::from_raw(n, data))
}

/// `U diag(max(lambda, floor)) U^T`.
pub fn clamp_eigs(s: &SymMatrix, floor: f64) -> Result<SpdMatrix, LinalgError> {
    if !(floor > 0.0) || !floor.is_finite() {
        return Err(LinalgError::InvalidArgument(format!("floor must be > 0, got {floor}")));
    }
    let eig = sym_eig(s)?;
    Ok(SpdMatrix(eig.map_values(|l| l.max(floor))))
}

/// Matrix exponential of a symmetric matrix.
pub fn spd_exp(s: &SymMatrix) -> Result<SpdMatrix, LinalgError> {
    let eig = sym_eig(s)?;
    check_exp_range(&eig)?;
    Ok(SpdMatrix(eig.map_values(f64::exp)))
}

pub(crate) fn check_exp_range(eig: &EigenDecomposition) -> Result<(), LinalgError> {
    if eig.max_value() > EXP_LIMIT {
        return Err(LinalgError::Overflow { value: eig.max_value() });
    }
    if eig.min_value() < -EXP_LIMIT {
        return Err(LinalgError::Overflow { value: eig.min_value() });
    }
    Ok(())
}

fn positive_eig(p: &SpdMatrix) -> Result<EigenDecomposition, LinalgError> {
    let eig = sym_eig(&p.0)?;
    if eig.min_value() <= 0.0 {
        return Err(LinalgError::NotPositiveDefinite { min_eig: eig.min_value() });
    }
    Ok(eig)
}

/// Matrix logarithm of an SPD matrix.
pub fn spd_log(p: &SpdMatrix) -> Result<SymMatrix, LinalgError> {
    Ok(positive_eig(p)?.map_values(f64::ln))
}

pub fn spd_sqrt(p: &SpdMatrix) -> Result<SpdMatrix, LinalgError> {
    Ok(SpdMatrix(positive_eig(p)?.map_values(f64::sqrt)))
}

pub fn spd_inv_sqrt(p: &SpdMatrix) -> Result<SpdMatrix, LinalgError> {
    Ok(SpdMatrix(positive_eig(p)?.map_values(|l| 1.0 / l.sqrt())))
}

pub fn spd_inverse(p: &SpdMatrix) -> Result<SpdMatrix, LinalgError> {
    Ok(SpdMatrix(positive_eig(p)?.map_values(|l| 1.0 / l)))
}

/// Affine-invariant geodesic distance `||log(P^{-1/2} Q P^{-1/2})||_F`.
pub fn spd_distance(p: &SpdMatrix, q: &SpdMatrix) -> Result<f64, LinalgError> {
    check_dims(p.dim(), q.dim())?;
    let n = p.dim();
    let w = spd_inv_sqrt(p)?;
    let inner = matmul(n, &matmul(n, w.as_slice(), q.as_slice()), w.as_slice());
    let inner = SymMatrix::new(n, inner)?;
    let eig = sym_eig(&inner)?;
    if eig.min_value() <= 0.0 {
        return Err(LinalgError::NotPositiveDefinite { min_eig: eig.min_value() });
    }
    Ok(eig.values().iter().map(|l| l.ln().powi(2)).sum::<f64>().sqrt())
}

fn check_dims(a: usize, b: usize) -> Result<(), LinalgError> {
    if a != b {
        return Err(LinalgError::DimensionMismatch { left: a, right: b });
    }
    Ok(())
}

pub(crate) fn symmetrize_in_place(n: usize, data: &mut [f64]) {
    for i in 0..n {
        for j in (i + 1)..n {
            let m = 0.5 * (data[i * n + j] + data[j * n + i]);
            data[i * n + j] = m;
            data[j * n + i] = m;
        }
    }
}

/// `U diag(d) U^T` for a row-major `U`.
pub(crate) fn reconstruct(n: usize, u: &[f64], d: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let mut acc = 0.0;
            for k in 0..n {
                acc += u[i * n + k] * d[k] * u[j * n + k];
            }
            out[i * n + j] = acc;
            out[j * n + i] = acc;
        }
    }
    out
}

/// Square row-major product.
pub fn matmul(n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for k in 0..n {
            let aik = a[i * n + k];
            if aik == 0.0 {
                continue;
            }
            for j in 0..n {
                out[i * n + j] += aik * b[k * n + j];
            }
        }
    }
    out
}

pub fn transpose(n: usize, a: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            out[j * n + i] = a[i * n + j];
        }
    }
    out
}

pub(crate) fn frobenius(a: &[f64]) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}
