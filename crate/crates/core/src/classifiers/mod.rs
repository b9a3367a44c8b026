//! Classification heads over tangent-space embeddings: a linear softmax
//! head, a multi-class SVM on SPD logarithms and a nearest-centroid head
//! with learned metrics.

use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AdError, Tensor, Var};
use crate::gnn::uniform;
use crate::manifolds::tape::broadcast_rows;
use crate::manifolds::{upper_of, GeometryContext};
use crate::params::ParamSet;
use crate::symcore::SymMatrix;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClassifierError {
    #[error("regularization weight must be non-negative, got {0}")]
    NegativeLambda(f64),
    #[error("{0} requires SPD embeddings")]
    RequiresSpd(&'static str),
    #[error("need at least two classes, got {0}")]
    TooFewClasses(usize),
    #[error("unknown classifier '{0}'")]
    Unknown(String),
    #[error(transparent)]
    Ad(#[from] AdError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ClassifierKind {
    #[serde(rename = "linear-xe")]
    LinearXe,
    #[serde(rename = "svm-mm")]
    SvmMm,
    #[serde(rename = "nc-mm")]
    NcMm,
}

impl ClassifierKind {
    pub const ALL: [ClassifierKind; 3] = [ClassifierKind::LinearXe, ClassifierKind::SvmMm, ClassifierKind::NcMm];

    pub fn name(&self) -> &'static str {
        match self {
            ClassifierKind::LinearXe => "linear-xe",
            ClassifierKind::SvmMm => "svm-mm",
            ClassifierKind::NcMm => "nc-mm",
        }
    }

    /// Margin heads take the regularization weight `C` as a hyperparameter.
    pub fn is_margin(&self) -> bool {
        !matches!(self, ClassifierKind::LinearXe)
    }
}

impl std::str::FromStr for ClassifierKind {
    type Err = ClassifierError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ClassifierKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| ClassifierError::Unknown(s.to_string()))
    }
}

/// Row-wise upper triangle `(X11, .., X1n, X22, .., Xnn)` without any
/// off-diagonal weighting.
pub fn vectorize_upper(x: &SymMatrix) -> Vec<f64> {
    upper_of(x)
}

/// Index of the largest entry of each row; ties go to the lowest index.
pub fn argmax_rows(scores: &Tensor) -> Vec<usize> {
    let (n, k) = scores.rows();
    (0..n)
        .map(|i| {
            let row = scores.row(i);
            (1..k).fold(0, |best, j| if row[j] > row[best] { j } else { best })
        })
        .collect()
}

/// `x W^T`: logits `[N, K]` from features `[N, D]` and `W[K, D]`.
pub fn linear_xe_scores<'t>(x: Var<'t>, w: Var<'t>) -> Result<Var<'t>, AdError> {
    x.linear(w)
}

/// `s_ik = Tr(W_k X_i)` for symmetric `x[N, n, n]` and `w[K, n, n]`.
pub fn svm_mm_scores<'t>(x: Var<'t>, w: Var<'t>) -> Result<Var<'t>, AdError> {
    let (xs, ws) = (x.shape(), w.shape());
    if xs.len() != 3 || ws.len() != 3 || xs[1..] != ws[1..] {
        return Err(AdError::ShapeMismatch { op: "svm_mm_scores", left: xs, right: ws });
    }
    let nn = xs[1] * xs[2];
    x.reshape(&[xs[0], nn])?.linear(w.reshape(&[ws[0], nn])?)
}

/// `lambda sum_k Tr(W_k C W_k C) + (1/(N K^2)) sum_i sum_k sum_{l != k}
/// max(0, 1 - Tr(W_{y_i} X_i) + Tr(W_l X_i))` with `C` the mean of the
/// batch `x[N, n, n]`.
pub fn svm_mm_loss<'t>(
    x: Var<'t>,
    labels: Rc<Vec<usize>>,
    w: Var<'t>,
    lambda: f64,
) -> Result<Var<'t>, ClassifierError> {
    if !(lambda >= 0.0) {
        return Err(ClassifierError::NegativeLambda(lambda));
    }
    let hinge = svm_mm_scores(x, w)?.pairwise_hinge(labels)?;
    if lambda == 0.0 {
        return Ok(hinge);
    }
    let n = x.shape()[0].max(1);
    let c = x.sum_rows()?.scale(1.0 / n as f64)?;
    let wc = w.matmul(c)?;
    let reg = wc.mul(wc.transpose()?)?.sum()?;
    Ok(hinge.add(reg.scale(lambda)?)?)
}

/// `sim_ik = -1/2 (x_i - mu_k)^T P_k (x_i - mu_k) + b_k` for `x[N, D]`,
/// `mu[K, D]`, SPD `p[K, D, D]` and `b[K]`.
pub fn nc_mm_scores<'t>(x: Var<'t>, mu: Var<'t>, p: Var<'t>, b: Var<'t>) -> Result<Var<'t>, AdError> {
    let (n, d) = match x.shape()[..] {
        [n, d] => (n, d),
        _ => return Err(AdError::ShapeMismatch { op: "nc_mm_scores", left: x.shape(), right: mu.shape() }),
    };
    let k = mu.shape()[0];
    if mu.shape() != [k, d] || p.shape() != [k, d, d] || b.shape() != [k] {
        return Err(AdError::ShapeMismatch { op: "nc_mm_scores", left: mu.shape(), right: p.shape() });
    }
    let cols = (0..k)
        .map(|c| {
            let pick = Rc::new(vec![c]);
            let centre = broadcast_rows(mu.gather_rows(pick.clone())?.reshape(&[d])?, n)?;
            let pk = p.gather_rows(pick.clone())?.reshape(&[d, d])?;
            let bk = broadcast_rows(b.gather_rows(pick)?.reshape(&[1])?, n)?.reshape(&[n])?;
            let diff = x.sub(centre)?;
            diff.matmul(pk)?.mul(diff)?.sum_last()?.scale(-0.5)?.add(bk)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Var::stack_columns(&cols)
}

/// Value-level `-1/2 (x - mu)^T P (x - mu) + b` with `P` row-major `[d, d]`.
pub fn nc_mm_similarity(x: &[f64], mu: &[f64], p: &[f64], b: f64) -> f64 {
    let d = x.len();
    assert_eq!(mu.len(), d);
    assert_eq!(p.len(), d * d);
    let diff: Vec<f64> = x.iter().zip(mu).map(|(a, m)| a - m).collect();
    let mut q = 0.0;
    for i in 0..d {
        for j in 0..d {
            q += diff[i] * p[i * d + j] * diff[j];
        }
    }
    -0.5 * q + b
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
enum HeadIds {
    LinearXe { w: usize },
    SvmMm { w: usize },
    NcMm { mu: usize, p: usize, b: usize },
}

/// A classification head bound to parameter ids in a [`ParamSet`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Head {
    pub kind: ClassifierKind,
    pub geometry: GeometryContext,
    pub num_classes: usize,
    /// Regularization weight of the SVM head; unused otherwise.
    pub lambda: f64,
    ids: HeadIds,
}

impl Head {
    /// Linear weights and SVM hyperplanes use fan-in scaled uniform init;
    /// centroids start at small random points with `P_k = I`, `b_k = 0`.
    pub fn init<R: Rng + ?Sized>(
        kind: ClassifierKind,
        geometry: GeometryContext,
        num_classes: usize,
        lambda: f64,
        params: &mut ParamSet,
        rng: &mut R,
    ) -> Result<Self, ClassifierError> {
        if num_classes < 2 {
            return Err(ClassifierError::TooFewClasses(num_classes));
        }
        if !(lambda >= 0.0) {
            return Err(ClassifierError::NegativeLambda(lambda));
        }
        let d = geometry.ambient_dim();
        let k = num_classes;
        let ids = match kind {
            ClassifierKind::LinearXe => HeadIds::LinearXe { w: params.add("head.w", uniform(rng, &[k, d], d)) },
            ClassifierKind::SvmMm => {
                let GeometryContext::Spd(n) = geometry else {
                    return Err(ClassifierError::RequiresSpd("svm-mm"));
                };
                HeadIds::SvmMm { w: params.add("head.w", uniform(rng, &[k, n, n], n * n)) }
            }
            ClassifierKind::NcMm => HeadIds::NcMm {
                mu: params.add("head.mu", uniform(rng, &[k, d], d)),
                p: params.add("head.p", Tensor::zeros(&[k, d, d])),
                b: params.add("head.b", Tensor::zeros(&[k])),
            },
        };
        Ok(Head { kind, geometry, num_classes, lambda, ids })
    }

    /// Class scores `[N, K]` for embeddings `z` in the geometry's layout.
    pub fn scores<'t>(&self, vars: &[Var<'t>], z: Var<'t>) -> Result<Var<'t>, AdError> {
        match self.ids {
            HeadIds::LinearXe { w } => linear_xe_scores(self.geometry.tangent_features(z)?, vars[w]),
            HeadIds::SvmMm { w } => svm_mm_scores(z.sym_log()?, vars[w].symmetrize()?),
            HeadIds::NcMm { mu, p, b } => {
                let metric = vars[p].symmetrize()?.sym_exp()?;
                nc_mm_scores(self.geometry.tangent_features(z)?, vars[mu], metric, vars[b])
            }
        }
    }

    /// Training loss of the head on the batch `z`.
    pub fn loss<'t>(&self, vars: &[Var<'t>], z: Var<'t>, labels: Rc<Vec<usize>>) -> Result<Var<'t>, ClassifierError> {
        match self.ids {
            HeadIds::LinearXe { .. } => Ok(self.scores(vars, z)?.cross_entropy(labels)?),
            HeadIds::SvmMm { w } => svm_mm_loss(z.sym_log()?, labels, vars[w].symmetrize()?, self.lambda),
            HeadIds::NcMm { .. } => Ok(self.scores(vars, z)?.multi_margin(labels, 1.0)?),
        }
    }
}
