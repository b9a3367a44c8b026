//! Differentiable geometry operations on batches of node embeddings.
//!
//! Embedding layouts on the tape:
//!
//! | geometry   | points       | tangent (flat) |
//! |------------|--------------|----------------|
//! | Euclidean  | `[N, d]`     | `[N, d]`       |
//! | Hyperbolic | `[N, d]`     | `[N, d]`       |
//! | SPD        | `[N, n, n]`  | `[N, n*n]`     |
//! | Product    | `[N, 2m]`, ball part first | `[N, 2m]` |
//!
//! Tangent spaces are taken at the origin, or at the identity for SPD.

use std::rc::Rc;

use serde::{Deserialize, Serialize};

use super::GeometryContext;
use crate::autodiff::{AdError, EigFn, Var};

/// Pointwise nonlinearity. On SPD this is an eigenvalue floor; the other
/// geometries always use ReLU in the tangent space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Nonlinearity {
    /// Eigenvalues floored at 1, i.e. `exp(ReLU(log P))`.
    TgReEig,
    /// Eigenvalues floored at `eps`.
    ReEig(f64),
}

impl Default for Nonlinearity {
    fn default() -> Self {
        Nonlinearity::TgReEig
    }
}

impl Nonlinearity {
    pub fn floor(self) -> f64 {
        match self {
            Nonlinearity::TgReEig => 1.0,
            Nonlinearity::ReEig(eps) => eps,
        }
    }
}

/// Feature-transform weights bound to a tape.
#[derive(Debug, Clone, Copy)]
pub enum TransformVars<'t> {
    /// `W[out, in]` (Euclidean, hyperbolic).
    Matrix(Var<'t>),
    /// Free square matrix, orthogonalized on use (SPD).
    Isometry(Var<'t>),
    /// `W11, W12, W21, W22`, each `[m, m]` (product).
    Blocks([Var<'t>; 4]),
}

fn wrong_transform(geometry: &GeometryContext) -> AdError {
    AdError::InvalidArgument(format!("transform weights do not match the {} geometry", geometry.name()))
}

/// Repeats `v` (any shape) `n` times along a new leading axis.
pub fn broadcast_rows<'t>(v: Var<'t>, n: usize) -> Result<Var<'t>, AdError> {
    let shape = v.shape();
    let len: usize = shape.iter().product();
    let mut out_shape = vec![n];
    out_shape.extend_from_slice(&shape);
    v.reshape(&[1, len])?.gather_rows(Rc::new(vec![0; n]))?.reshape(&out_shape)
}

/// `out_i = sum_e w_e t_{src_e}` over edges with `dst_e = i`.
pub fn propagate<'t>(
    t: Var<'t>,
    src: &Rc<Vec<usize>>,
    dst: &Rc<Vec<usize>>,
    weights: Var<'t>,
    n_out: usize,
) -> Result<Var<'t>, AdError> {
    t.gather_rows(src.clone())?.row_scale(weights)?.scatter_add_rows(dst.clone(), n_out)
}

fn rows(v: Var<'_>) -> usize {
    v.shape()[0]
}

impl GeometryContext {
    pub fn to_tangent<'t>(&self, z: Var<'t>) -> Result<Var<'t>, AdError> {
        match *self {
            GeometryContext::Euclidean(_) => Ok(z),
            GeometryContext::Hyperbolic(_) => z.logmap0(),
            GeometryContext::Spd(n) => z.sym_log()?.reshape(&[rows(z), n * n]),
            GeometryContext::Product(m) => Var::concat(&[z.slice_last(0, m)?.logmap0()?, z.slice_last(m, m)?]),
        }
    }

    pub fn from_tangent<'t>(&self, t: Var<'t>) -> Result<Var<'t>, AdError> {
        match *self {
            GeometryContext::Euclidean(_) => Ok(t),
            GeometryContext::Hyperbolic(_) => t.expmap0(),
            GeometryContext::Spd(n) => t.reshape(&[rows(t), n, n])?.sym_exp(),
            GeometryContext::Product(m) => Var::concat(&[t.slice_last(0, m)?.expmap0()?, t.slice_last(m, m)?]),
        }
    }

    /// Maps raw input features `x[N, f]` into the geometry with `w_in`:
    /// a linear map for Euclidean space, `expmap0(W x)` on the ball,
    /// `exp(U + U^T)` with `U` the upper triangle filled by `W x` on SPD,
    /// and both of the former on the two product factors.
    pub fn input_map<'t>(&self, x: Var<'t>, w_in: Var<'t>) -> Result<Var<'t>, AdError> {
        let v = x.linear(w_in)?;
        match *self {
            GeometryContext::Euclidean(_) => Ok(v),
            GeometryContext::Hyperbolic(_) => v.expmap0(),
            GeometryContext::Spd(_) => v.sym_from_upper()?.sym_exp(),
            GeometryContext::Product(m) => Var::concat(&[v.slice_last(0, m)?.expmap0()?, v.slice_last(m, m)?]),
        }
    }

    /// Feature transform on points: `W x`, `W (.) x`, `M P M^T`, or the
    /// product block map.
    pub fn transform<'t>(&self, z: Var<'t>, w: TransformVars<'t>) -> Result<Var<'t>, AdError> {
        match (*self, w) {
            (GeometryContext::Euclidean(_), TransformVars::Matrix(w)) => z.linear(w),
            (GeometryContext::Hyperbolic(_), TransformVars::Matrix(w)) => hyp_matvec(z, w),
            (GeometryContext::Spd(_), TransformVars::Isometry(m_raw)) => {
                let m = m_raw.orthogonalize()?;
                m.matmul(z)?.matmul(m.transpose()?)
            }
            (GeometryContext::Product(m), TransformVars::Blocks([w11, w12, w21, w22])) => {
                let z1 = z.slice_last(0, m)?;
                let z2 = z.slice_last(m, m)?;
                let h1 = hyp_matvec(z1, w11)?.mobius_add(hyp_matvec(z2.expmap0()?, w12)?)?;
                let h2 = z1.logmap0()?.linear(w21)?.add(z2.linear(w22)?)?;
                Var::concat(&[h1, h2])
            }
            (g, _) => Err(wrong_transform(&g)),
        }
    }

    /// Linear feature transform on flat tangent vectors: `W t`, `M T M^T`,
    /// or the block matrix `[[W11, W12], [W21, W22]]`.
    pub fn tangent_transform<'t>(&self, t: Var<'t>, w: TransformVars<'t>) -> Result<Var<'t>, AdError> {
        match (*self, w) {
            (GeometryContext::Euclidean(_) | GeometryContext::Hyperbolic(_), TransformVars::Matrix(w)) => t.linear(w),
            (GeometryContext::Spd(n), TransformVars::Isometry(m_raw)) => {
                let m = m_raw.orthogonalize()?;
                let mats = t.reshape(&[rows(t), n, n])?;
                m.matmul(mats)?.matmul(m.transpose()?)?.reshape(&[rows(t), n * n])
            }
            (GeometryContext::Product(m), TransformVars::Blocks([w11, w12, w21, w22])) => {
                let t1 = t.slice_last(0, m)?;
                let t2 = t.slice_last(m, m)?;
                let h1 = t1.linear(w11)?.add(t2.linear(w12)?)?;
                let h2 = t1.linear(w21)?.add(t2.linear(w22)?)?;
                Var::concat(&[h1, h2])
            }
            (g, _) => Err(wrong_transform(&g)),
        }
    }

    /// Weighted neighbourhood aggregation in the tangent space.
    pub fn aggregate<'t>(
        &self,
        z: Var<'t>,
        src: &Rc<Vec<usize>>,
        dst: &Rc<Vec<usize>>,
        weights: Var<'t>,
    ) -> Result<Var<'t>, AdError> {
        let n = rows(z);
        self.from_tangent(propagate(self.to_tangent(z)?, src, dst, weights, n)?)
    }

    pub fn nonlinearity<'t>(&self, z: Var<'t>, nl: Nonlinearity) -> Result<Var<'t>, AdError> {
        match *self {
            GeometryContext::Euclidean(_) => z.relu(),
            GeometryContext::Hyperbolic(_) => z.logmap0()?.relu()?.expmap0(),
            GeometryContext::Spd(_) => z.eig_fn(EigFn::Floor(nl.floor())),
            GeometryContext::Product(m) => Var::concat(&[
                z.slice_last(0, m)?.logmap0()?.relu()?.expmap0()?,
                z.slice_last(m, m)?.relu()?,
            ]),
        }
    }

    /// Bias followed by the nonlinearity. Bias parameters are unconstrained:
    /// `b[d]` added to Euclidean points; a tangent vector `b[d]` whose
    /// exponential is Mobius-added on the ball; a symmetric `beta[n, n]`
    /// with `B = exp(beta)` gyro-added on SPD (`sqrt(P) B sqrt(P)`); and
    /// `b[2m]` split between the two product factors.
    pub fn bias_nonlin<'t>(&self, z: Var<'t>, bias: Var<'t>, nl: Nonlinearity) -> Result<Var<'t>, AdError> {
        let n = rows(z);
        match *self {
            GeometryContext::Euclidean(_) => z.add_bias(bias)?.relu(),
            GeometryContext::Hyperbolic(_) => {
                let b = broadcast_rows(bias, n)?.expmap0()?;
                self.nonlinearity(z.mobius_add(b)?, nl)
            }
            GeometryContext::Spd(_) => {
                let b = bias.symmetrize()?.sym_exp()?;
                let root = z.eig_fn(EigFn::Sqrt)?;
                let shifted = root.matmul(b)?.matmul(root)?.symmetrize()?;
                self.nonlinearity(shifted, nl)
            }
            GeometryContext::Product(m) => {
                let b = broadcast_rows(bias, n)?;
                let h = z.slice_last(0, m)?.mobius_add(b.slice_last(0, m)?.expmap0()?)?;
                let e = z.slice_last(m, m)?.add(b.slice_last(m, m)?)?;
                self.nonlinearity(Var::concat(&[h, e])?, nl)
            }
        }
    }

    /// Compact tangent vectors `[N, ambient_dim]`; SPD logs are vectorized
    /// by their row-wise upper triangles.
    pub fn tangent_features<'t>(&self, z: Var<'t>) -> Result<Var<'t>, AdError> {
        match *self {
            GeometryContext::Spd(_) => z.sym_log()?.vec_upper(),
            _ => self.to_tangent(z),
        }
    }

    /// Compacts an already log-mapped flat tangent `[N, ...]` the same way
    /// as [`GeometryContext::tangent_features`].
    pub fn compact_tangent<'t>(&self, t: Var<'t>) -> Result<Var<'t>, AdError> {
        match *self {
            GeometryContext::Spd(n) => t.reshape(&[rows(t), n, n])?.vec_upper(),
            _ => Ok(t),
        }
    }

    /// Mean of the node embeddings of each graph; `segment[i]` is the graph
    /// of node `i`. SPD points are averaged entrywise, ball points in the
    /// tangent space at the origin.
    pub fn readout_mean<'t>(&self, z: Var<'t>, segment: &Rc<Vec<usize>>, graphs: usize) -> Result<Var<'t>, AdError> {
        let mut counts = vec![0.0; graphs];
        for &g in segment.iter() {
            counts[g] += 1.0;
        }
        if let Some(empty) = counts.iter().position(|&c| c == 0.0) {
            return Err(AdError::InvalidArgument(format!("graph {empty} has no nodes")));
        }
        let inv = z.tape().constant(crate::autodiff::Tensor::vector(counts.iter().map(|c| 1.0 / c).collect()));
        let mean = |t: Var<'t>| -> Result<Var<'t>, AdError> { t.scatter_add_rows(segment.clone(), graphs)?.row_scale(inv) };
        match *self {
            GeometryContext::Euclidean(_) => mean(z),
            GeometryContext::Spd(n) => mean(z.reshape(&[rows(z), n * n])?)?.reshape(&[graphs, n, n]),
            GeometryContext::Hyperbolic(_) | GeometryContext::Product(_) => self.from_tangent(mean(self.to_tangent(z)?)?),
        }
    }
}

/// `expmap0(W logmap0(x))` row-wise.
pub fn hyp_matvec<'t>(x: Var<'t>, w: Var<'t>) -> Result<Var<'t>, AdError> {
    x.logmap0()?.linear(w)?.expmap0()
}
