//! The four latent geometries: Euclidean space, the Poincare ball, SPD
//! matrices with their gyro-structure, and the product of a ball with a
//! Euclidean factor.
//!
//! This module holds the plain-value operations. [`tape`] provides the
//! differentiable versions used by the graph layers.

pub mod tape;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::linalg::qr_regularized;
use crate::autodiff::{RadialMap, BALL_MAX_NORM};
use crate::symcore::{self, LinalgError, SpdMatrix, SymMatrix};

pub use tape::{Nonlinearity, TransformVars};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ManifoldError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("point of norm {norm} lies outside the Poincare ball")]
    OutsideBall { norm: f64 },
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Geometry and its size parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "dim", rename_all = "lowercase")]
pub enum GeometryContext {
    Euclidean(usize),
    Hyperbolic(usize),
    /// `n x n` SPD matrices.
    Spd(usize),
    /// `H^m x R^m`.
    Product(usize),
}

impl GeometryContext {
    pub fn new(self) -> Result<Self, ManifoldError> {
        match self {
            GeometryContext::Spd(n) if n < 2 => {
                Err(ManifoldError::InvalidGeometry(format!("SPD geometry needs n >= 2, got {n}")))
            }
            GeometryContext::Euclidean(0) | GeometryContext::Hyperbolic(0) | GeometryContext::Product(0) => {
                Err(ManifoldError::InvalidGeometry("dimension must be positive".into()))
            }
            g => Ok(g),
        }
    }

    /// Builds a geometry from its name and ambient dimension, so that
    /// `("spd", 6)` is `SPD_3` and `("product", 6)` is `H^3 x R^3`.
    pub fn from_name(name: &str, ambient: usize) -> Result<Self, ManifoldError> {
        let g = match name.to_ascii_lowercase().as_str() {
            "euclidean" | "r" => GeometryContext::Euclidean(ambient),
            "hyperbolic" | "h" | "poincare" => GeometryContext::Hyperbolic(ambient),
            "spd" => {
                let n = crate::autodiff::ops::side_from_upper_len(ambient).ok_or_else(|| {
                    ManifoldError::InvalidGeometry(format!("SPD ambient dimension {ambient} is not n(n+1)/2"))
                })?;
                GeometryContext::Spd(n)
            }
            "product" | "hxr" => {
                if ambient % 2 != 0 {
                    return Err(ManifoldError::InvalidGeometry(format!("product dimension {ambient} is odd")));
                }
                GeometryContext::Product(ambient / 2)
            }
            other => return Err(ManifoldError::InvalidGeometry(format!("unknown geometry '{other}'"))),
        };
        g.new()
    }

    pub fn name(&self) -> &'static str {
        match self {
            GeometryContext::Euclidean(_) => "euclidean",
            GeometryContext::Hyperbolic(_) => "hyperbolic",
            GeometryContext::Spd(_) => "spd",
            GeometryContext::Product(_) => "product",
        }
    }

    /// `d`, `d`, `n(n+1)/2` and `2m` respectively.
    pub fn ambient_dim(&self) -> usize {
        match *self {
            GeometryContext::Euclidean(d) | GeometryContext::Hyperbolic(d) => d,
            GeometryContext::Spd(n) => n * (n + 1) / 2,
            GeometryContext::Product(m) => 2 * m,
        }
    }

    pub fn is_spd(&self) -> bool {
        matches!(self, GeometryContext::Spd(_))
    }
}

/// A point on one of the four geometries.
#[derive(Debug, Clone, PartialEq)]
pub enum ManifoldPoint {
    Euclidean(Vec<f64>),
    Poincare(Vec<f64>),
    Spd(SpdMatrix),
    Product(Vec<f64>, Vec<f64>),
}

impl ManifoldPoint {
    pub fn validate(&self) -> Result<(), ManifoldError> {
        match self {
            ManifoldPoint::Euclidean(v) => finite(v),
            ManifoldPoint::Poincare(x) => in_ball(x),
            ManifoldPoint::Spd(p) => {
                let min = p.min_eigenvalue()?;
                if min > 0.0 {
                    Ok(())
                } else {
                    Err(LinalgError::NotPositiveDefinite { min_eig: min }.into())
                }
            }
            ManifoldPoint::Product(h, e) => {
                if h.len() != e.len() {
                    return Err(ManifoldError::DimensionMismatch { expected: h.len(), found: e.len() });
                }
                in_ball(h)?;
                finite(e)
            }
        }
    }

    /// Tangent vector at the origin (identity for SPD). SPD tangents are
    /// returned as row-wise upper triangles.
    pub fn logmap0(&self) -> Result<Vec<f64>, ManifoldError> {
        Ok(match self {
            ManifoldPoint::Euclidean(v) => v.clone(),
            ManifoldPoint::Poincare(x) => poincare_logmap0(x),
            ManifoldPoint::Spd(p) => upper_of(&symcore::spd_log(p)?),
            ManifoldPoint::Product(h, e) => {
                let mut t = poincare_logmap0(h);
                t.extend_from_slice(e);
                t
            }
        })
    }

    /// Inverse of [`ManifoldPoint::logmap0`].
    pub fn expmap0(geometry: GeometryContext, v: &[f64]) -> Result<Self, ManifoldError> {
        let expect = geometry.ambient_dim();
        if v.len() != expect {
            return Err(ManifoldError::DimensionMismatch { expected: expect, found: v.len() });
        }
        Ok(match geometry {
            GeometryContext::Euclidean(_) => ManifoldPoint::Euclidean(v.to_vec()),
            GeometryContext::Hyperbolic(_) => ManifoldPoint::Poincare(poincare_expmap0(v)),
            GeometryContext::Spd(n) => ManifoldPoint::Spd(symcore::spd_exp(&sym_of_upper(n, v))?),
            GeometryContext::Product(m) => ManifoldPoint::Product(poincare_expmap0(&v[..m]), v[m..].to_vec()),
        })
    }
}

fn finite(v: &[f64]) -> Result<(), ManifoldError> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(LinalgError::NonFinite.into())
    }
}

fn in_ball(x: &[f64]) -> Result<(), ManifoldError> {
    finite(x)?;
    let norm = norm(x);
    if norm <= BALL_MAX_NORM {
        Ok(())
    } else {
        Err(ManifoldError::OutsideBall { norm })
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

fn radial(x: &[f64], map: RadialMap) -> Vec<f64> {
    let (g, _) = map.coefficients(norm(x));
    x.iter().map(|v| g * v).collect()
}

/// Row-wise upper triangle of a symmetric matrix.
pub fn upper_of(s: &SymMatrix) -> Vec<f64> {
    let n = s.dim();
    (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).map(|(i, j)| s.get(i, j)).collect()
}

/// Symmetric matrix whose row-wise upper triangle is `v`.
pub fn sym_of_upper(n: usize, v: &[f64]) -> SymMatrix {
    let mut data = vec![0.0; n * n];
    let mut k = 0;
    for i in 0..n {
        for j in i..n {
            data[i * n + j] = v[k];
            data[j * n + i] = v[k];
            k += 1;
        }
    }
    SymMatrix::from_raw(n, data)
}

fn same_dim(p: &SpdMatrix, q: &SpdMatrix) -> Result<(), ManifoldError> {
    if p.dim() == q.dim() {
        Ok(())
    } else {
        Err(ManifoldError::DimensionMismatch { expected: p.dim(), found: q.dim() })
    }
}

fn to_spd(n: usize, mut data: Vec<f64>) -> Result<SpdMatrix, ManifoldError> {
    symcore::symmetrize_in_place(n, &mut data);
    Ok(SpdMatrix::new(SymMatrix::from_raw(n, data))?)
}

/// `P (+) Q = sqrt(P) Q sqrt(P)`.
pub fn spd_gyro_add(p: &SpdMatrix, q: &SpdMatrix) -> Result<SpdMatrix, ManifoldError> {
    same_dim(p, q)?;
    let n = p.dim();
    let s = symcore::spd_sqrt(p)?;
    to_spd(n, symcore::matmul(n, &symcore::matmul(n, s.as_slice(), q.as_slice()), s.as_slice()))
}

/// `(-) P = P^{-1}`.
pub fn spd_gyro_inverse(p: &SpdMatrix) -> Result<SpdMatrix, ManifoldError> {
    Ok(symcore::spd_inverse(p)?)
}

/// Q factor (positive `diag(R)`) of a square row-major matrix.
pub fn orthogonalize(n: usize, m_raw: &[f64]) -> Result<Vec<f64>, ManifoldError> {
    if m_raw.len() != n * n {
        return Err(ManifoldError::DimensionMismatch { expected: n * n, found: m_raw.len() });
    }
    Ok(qr_regularized(n, m_raw)?.0)
}

/// `M P M^T` with `M = orthogonalize(M_raw)`.
pub fn spd_isometry(m_raw: &[f64], p: &SpdMatrix) -> Result<SpdMatrix, ManifoldError> {
    let n = p.dim();
    let m = orthogonalize(n, m_raw)?;
    to_spd(n, symcore::matmul(n, &symcore::matmul(n, &m, p.as_slice()), &symcore::transpose(n, &m)))
}

/// Floors the eigenvalues at `eps`.
pub fn reeig(p: &SpdMatrix, eps: f64) -> Result<SpdMatrix, ManifoldError> {
    Ok(symcore::clamp_eigs(p.as_sym(), eps)?)
}

/// `exp(ReLU(log P))`, i.e. eigenvalues floored at 1.
pub fn tgreeig(p: &SpdMatrix) -> Result<SpdMatrix, ManifoldError> {
    reeig(p, 1.0)
}

/// Rescales `x` into the ball if its norm exceeds `1 - 1e-5`.
pub fn project_to_ball(x: &[f64]) -> Vec<f64> {
    radial(x, RadialMap::Project)
}

/// Mobius addition on the unit ball, curvature -1.
pub fn mobius_add(x: &[f64], y: &[f64]) -> Result<Vec<f64>, ManifoldError> {
    if x.len() != y.len() {
        return Err(ManifoldError::DimensionMismatch { expected: x.len(), found: y.len() });
    }
    let xy = dot(x, y);
    let x2 = dot(x, x);
    let y2 = dot(y, y);
    let cx = 1.0 + 2.0 * xy + y2;
    let cy = 1.0 - x2;
    let den = 1.0 + 2.0 * xy + x2 * y2;
    let out: Vec<f64> = x.iter().zip(y).map(|(a, b)| (cx * a + cy * b) / den).collect();
    let out = project_to_ball(&out);
    in_ball(&out)?;
    Ok(out)
}

/// `tanh(|v|) v / |v|`.
pub fn poincare_expmap0(v: &[f64]) -> Vec<f64> {
    radial(v, RadialMap::Expmap0)
}

/// `artanh(|x|) x / |x|`.
pub fn poincare_logmap0(x: &[f64]) -> Vec<f64> {
    radial(x, RadialMap::Logmap0)
}

/// `W (.) x = expmap0(W logmap0(x))` for a row-major `rows x x.len()` matrix.
pub fn hyp_matvec(w: &[f64], rows: usize, x: &[f64]) -> Result<Vec<f64>, ManifoldError> {
    let cols = x.len();
    if w.len() != rows * cols {
        return Err(ManifoldError::DimensionMismatch { expected: rows * cols, found: w.len() });
    }
    let t = poincare_logmap0(x);
    let wt: Vec<f64> = (0..rows).map(|r| dot(&w[r * cols..(r + 1) * cols], &t)).collect();
    Ok(poincare_expmap0(&wt))
}

fn matvec(w: &[f64], m: usize, x: &[f64]) -> Vec<f64> {
    (0..m).map(|r| dot(&w[r * m..(r + 1) * m], x)).collect()
}

/// The four `m x m` blocks of a product-space feature transform.
#[derive(Debug, Clone, PartialEq)]
pub struct ProductBlocks {
    pub m: usize,
    pub w11: Vec<f64>,
    pub w12: Vec<f64>,
    pub w21: Vec<f64>,
    pub w22: Vec<f64>,
}

impl ProductBlocks {
    pub fn identity(m: usize) -> Self {
        let eye: Vec<f64> = (0..m * m).map(|k| if k / m == k % m { 1.0 } else { 0.0 }).collect();
        ProductBlocks { m, w11: eye.clone(), w12: vec![0.0; m * m], w21: vec![0.0; m * m], w22: eye }
    }
}

fn check_pair(m: usize, h: &[f64], e: &[f64]) -> Result<(), ManifoldError> {
    for len in [h.len(), e.len()] {
        if len != m {
            return Err(ManifoldError::DimensionMismatch { expected: m, found: len });
        }
    }
    Ok(())
}

/// `((W11 (.) z1) (+) (W12 (.) exp(z2)), W21 log(z1) + W22 z2)`.
pub fn product_transform(
    w: &ProductBlocks,
    z1: &[f64],
    z2: &[f64],
) -> Result<(Vec<f64>, Vec<f64>), ManifoldError> {
    let m = w.m;
    check_pair(m, z1, z2)?;
    let a = hyp_matvec(&w.w11, m, z1)?;
    let b = hyp_matvec(&w.w12, m, &poincare_expmap0(z2))?;
    let h1 = mobius_add(&a, &b)?;
    let l1 = poincare_logmap0(z1);
    let h2: Vec<f64> = matvec(&w.w21, m, &l1).iter().zip(matvec(&w.w22, m, z2)).map(|(p, q)| p + q).collect();
    Ok((h1, h2))
}

/// `(expmap0(sum k logmap0(q1)), sum k q2)`.
pub fn product_aggregate(
    weights: &[f64],
    points: &[(Vec<f64>, Vec<f64>)],
) -> Result<(Vec<f64>, Vec<f64>), ManifoldError> {
    if weights.len() != points.len() {
        return Err(ManifoldError::DimensionMismatch { expected: points.len(), found: weights.len() });
    }
    let m = points.first().map(|p| p.0.len()).unwrap_or(0);
    let mut t1 = vec![0.0; m];
    let mut t2 = vec![0.0; m];
    for (k, (q1, q2)) in weights.iter().zip(points) {
        check_pair(m, q1, q2)?;
        for (acc, v) in t1.iter_mut().zip(poincare_logmap0(q1)) {
            *acc += k * v;
        }
        for (acc, v) in t2.iter_mut().zip(q2) {
            *acc += k * v;
        }
    }
    Ok((poincare_expmap0(&t1), t2))
}

/// `(exp(ReLU(log(p1 (+) b1))), ReLU(p2 + b2))`.
pub fn product_bias_nonlin(
    p: (&[f64], &[f64]),
    b: (&[f64], &[f64]),
) -> Result<(Vec<f64>, Vec<f64>), ManifoldError> {
    let m = p.0.len();
    check_pair(m, p.0, p.1)?;
    check_pair(m, b.0, b.1)?;
    let shifted = mobius_add(p.0, b.0)?;
    let t: Vec<f64> = poincare_logmap0(&shifted).into_iter().map(|v| v.max(0.0)).collect();
    let h2 = p.1.iter().zip(b.1).map(|(x, y)| (x + y).max(0.0)).collect();
    Ok((poincare_expmap0(&t), h2))
}
