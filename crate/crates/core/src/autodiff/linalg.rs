//! Matrix products and eigendecomposition-based matrix functions.

use super::ops::square_batch;
use super::{AdError, Tensor, Var};
use crate::symcore::{self, EigenDecomposition, LinalgError};

/// Eigenvalue gaps below this use the analytic limit `f'((a + b) / 2)`
/// instead of the divided difference.
pub const DIVIDED_DIFFERENCE_GUARD: f64 = 1e-6;

/// Scalar function applied to the eigenvalues of a symmetric matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EigFn {
    Exp,
    Log,
    Sqrt,
    InvSqrt,
    Inverse,
    /// `max(lambda, floor)`.
    Floor(f64),
}

impl EigFn {
    fn check(self, eig: &EigenDecomposition) -> Result<(), LinalgError> {
        match self {
            EigFn::Exp => symcore::check_exp_range(eig),
            EigFn::Log | EigFn::Sqrt | EigFn::InvSqrt | EigFn::Inverse if eig.min_value() <= 0.0 => {
                Err(LinalgError::NotPositiveDefinite { min_eig: eig.min_value() })
            }
            _ => Ok(()),
        }
    }

    pub fn value(self, x: f64) -> f64 {
        match self {
            EigFn::Exp => x.exp(),
            EigFn::Log => x.ln(),
            EigFn::Sqrt => x.sqrt(),
            EigFn::InvSqrt => 1.0 / x.sqrt(),
            EigFn::Inverse => 1.0 / x,
            EigFn::Floor(c) => x.max(c),
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            EigFn::Exp => x.exp(),
            EigFn::Log => 1.0 / x,
            EigFn::Sqrt => 0.5 / x.sqrt(),
            EigFn::InvSqrt => -0.5 / (x * x.sqrt()),
            EigFn::Inverse => -1.0 / (x * x),
            EigFn::Floor(c) => {
                if x > c {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Entry `(i, j)` of the Daleckii-Krein matrix.
    fn divided_difference(self, a: f64, fa: f64, b: f64, fb: f64) -> f64 {
        if (a - b).abs() < DIVIDED_DIFFERENCE_GUARD {
            self.derivative(0.5 * (a + b))
        } else {
            (fa - fb) / (a - b)
        }
    }
}

/// `out += op(a) * op(b)` where `op(a)` is `m x k` and `op(b)` is `k x n`.
#[allow(clippy::too_many_arguments)]
fn gemm_acc(out: &mut [f64], a: &[f64], ta: bool, b: &[f64], tb: bool, m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = if ta { a[p * m + i] } else { a[i * k + p] };
            if av == 0.0 {
                continue;
            }
            if tb {
                for (j, o) in row.iter_mut().enumerate() {
                    *o += av * b[j * k + p];
                }
            } else {
                let brow = &b[p * n..(p + 1) * n];
                for (o, bv) in row.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
    }
}

struct MatmulDims {
    batch: usize,
    a_batched: bool,
    b_batched: bool,
    m: usize,
    k: usize,
    n: usize,
}

fn matmul_dims(a: &Tensor, b: &Tensor) -> Result<MatmulDims, AdError> {
    let err = || AdError::ShapeMismatch { op: "matmul", left: a.shape().to_vec(), right: b.shape().to_vec() };
    let (ab, m, k) = match a.shape() {
        [m, k] => (None, *m, *k),
        [bt, m, k] => (Some(*bt), *m, *k),
        _ => return Err(err()),
    };
    let (bb, k2, n) = match b.shape() {
        [k, n] => (None, *k, *n),
        [bt, k, n] => (Some(*bt), *k, *n),
        _ => return Err(err()),
    };
    if k != k2 {
        return Err(err());
    }
    let batch = match (ab, bb) {
        (Some(x), Some(y)) if x != y => return Err(err()),
        (Some(x), _) | (None, Some(x)) => x,
        (None, None) => 1,
    };
    Ok(MatmulDims { batch, a_batched: ab.is_some(), b_batched: bb.is_some(), m, k, n })
}

impl<'t> Var<'t> {
    /// Matrix product with optional leading batch axis on either side;
    /// an unbatched operand is shared across the batch.
    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>, AdError> {
        let (a, b) = (self.value(), other.value());
        let d = matmul_dims(&a, &b)?;
        let (m, k, n) = (d.m, d.k, d.n);
        let mut out = vec![0.0; d.batch * m * n];
        for bi in 0..d.batch {
            let aoff = if d.a_batched { bi * m * k } else { 0 };
            let boff = if d.b_batched { bi * k * n } else { 0 };
            gemm_acc(
                &mut out[bi * m * n..(bi + 1) * m * n],
                &a.data()[aoff..aoff + m * k],
                false,
                &b.data()[boff..boff + k * n],
                false,
                m,
                k,
                n,
            );
        }
        let shape = if d.a_batched || d.b_batched { vec![d.batch, m, n] } else { vec![m, n] };
        self.tape.push(
            "matmul",
            Tensor::from_parts(shape, out),
            &[self, other],
            Box::new(move |c| {
                let (a, b, g) = (c.inputs[0].data(), c.inputs[1].data(), c.grad.data());
                let da = c.needs[0].then(|| {
                    let mut da = vec![0.0; a.len()];
                    for bi in 0..d.batch {
                        let aoff = if d.a_batched { bi * m * k } else { 0 };
                        let boff = if d.b_batched { bi * k * n } else { 0 };
                        // dA = G B^T
                        gemm_acc(
                            &mut da[aoff..aoff + m * k],
                            &g[bi * m * n..(bi + 1) * m * n],
                            false,
                            &b[boff..boff + k * n],
                            true,
                            m,
                            n,
                            k,
                        );
                    }
                    Tensor::from_parts(c.inputs[0].shape().to_vec(), da)
                });
                let db = c.needs[1].then(|| {
                    let mut db = vec![0.0; b.len()];
                    for bi in 0..d.batch {
                        let aoff = if d.a_batched { bi * m * k } else { 0 };
                        let boff = if d.b_batched { bi * k * n } else { 0 };
                        // dB = A^T G
                        gemm_acc(
                            &mut db[boff..boff + k * n],
                            &a[aoff..aoff + m * k],
                            true,
                            &g[bi * m * n..(bi + 1) * m * n],
                            false,
                            k,
                            m,
                            n,
                        );
                    }
                    Tensor::from_parts(c.inputs[1].shape().to_vec(), db)
                });
                vec![da, db]
            }),
        )
    }

    /// `x W^T` for `x[rows, in]` and `W[out, in]`.
    pub fn linear(self, weight: Var<'t>) -> Result<Var<'t>, AdError> {
        self.matmul(weight.transpose()?)
    }

    /// `U f(Lambda) U^T` for each symmetric matrix in a `[..., n, n]` tensor.
    ///
    /// The input is symmetrized before decomposition; inputs whose asymmetry
    /// exceeds `1e-8 (1 + max|S|)` are rejected. The backward pass uses the
    /// Daleckii-Krein form `dS = U (F o (U^T G U)) U^T` with
    /// `F_ij = (f(l_i) - f(l_j)) / (l_i - l_j)`, falling back to
    /// `f'((l_i + l_j) / 2)` for gaps under [`DIVIDED_DIFFERENCE_GUARD`].
    pub fn eig_fn(self, f: EigFn) -> Result<Var<'t>, AdError> {
        let x = self.value();
        let (batch, n) = square_batch("eig_fn", &x)?;
        let mut decomps = Vec::with_capacity(batch);
        let mut out = vec![0.0; x.len()];
        let mut buf = vec![0.0; n * n];
        for b in 0..batch {
            let src = &x.data()[b * n * n..(b + 1) * n * n];
            let scale = src.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let mut asym = 0.0f64;
            for i in 0..n {
                for j in (i + 1)..n {
                    asym = asym.max((src[i * n + j] - src[j * n + i]).abs());
                }
            }
            if asym > 1e-8 * (1.0 + scale) {
                return Err(AdError::NotSymmetric { op: "eig_fn", asymmetry: asym });
            }
            buf.copy_from_slice(src);
            symcore::symmetrize_in_place(n, &mut buf);
            let eig = symcore::eig_slice(n, &buf)?;
            f.check(&eig)?;
            let fl: Vec<f64> = eig.values().iter().map(|&l| f.value(l)).collect();
            out[b * n * n..(b + 1) * n * n].copy_from_slice(&symcore::reconstruct(n, eig.vectors(), &fl));
            decomps.push((eig, fl));
        }
        self.tape.push(
            "eig_fn",
            Tensor::from_parts(x.shape().to_vec(), out),
            &[self],
            Box::new(move |c| {
                let g = c.grad.data();
                let mut dx = vec![0.0; g.len()];
                for (b, (eig, fl)) in decomps.iter().enumerate() {
                    let gb = &g[b * n * n..(b + 1) * n * n];
                    let db = eig_fn_backward(n, eig, fl, f, gb);
                    dx[b * n * n..(b + 1) * n * n].copy_from_slice(&db);
                }
                vec![Some(Tensor::from_parts(c.grad.shape().to_vec(), dx))]
            }),
        )
    }

    pub fn sym_exp(self) -> Result<Var<'t>, AdError> {
        self.eig_fn(EigFn::Exp)
    }

    pub fn sym_log(self) -> Result<Var<'t>, AdError> {
        self.eig_fn(EigFn::Log)
    }

    /// Q factor of the QR factorization with positive `diag(R)`.
    ///
    /// Near-singular inputs are regularized by `1e-6 I` once; if that still
    /// leaves a vanishing pivot the call fails with `RankDeficient`.
    pub fn orthogonalize(self) -> Result<Var<'t>, AdError> {
        let a = self.value();
        let n = match a.shape() {
            [r, c] if r == c => *r,
            s => return Err(AdError::ShapeMismatch { op: "orthogonalize", left: s.to_vec(), right: vec![] }),
        };
        let (q, r) = qr_regularized(n, a.data())?;
        let qt = q.clone();
        self.tape.push(
            "orthogonalize",
            Tensor::from_parts(vec![n, n], q),
            &[self],
            Box::new(move |c| vec![Some(Tensor::from_parts(vec![n, n], qr_backward(n, &qt, &r, c.grad.data())))]),
        )
    }
}

fn eig_fn_backward(n: usize, eig: &EigenDecomposition, fl: &[f64], f: EigFn, g: &[f64]) -> Vec<f64> {
    let u = eig.vectors();
    let l = eig.values();
    let mut gs = g.to_vec();
    symcore::symmetrize_in_place(n, &mut gs);
    // inner = U^T G U
    let ut = symcore::transpose(n, u);
    let mut inner = symcore::matmul(n, &symcore::matmul(n, &ut, &gs), u);
    for i in 0..n {
        for j in 0..n {
            let w = if i == j { f.derivative(l[i]) } else { f.divided_difference(l[i], fl[i], l[j], fl[j]) };
            inner[i * n + j] *= w;
        }
    }
    let mut out = symcore::matmul(n, &symcore::matmul(n, u, &inner), &ut);
    symcore::symmetrize_in_place(n, &mut out);
    out
}

/// [`qr_positive`], retried once on `A + 1e-6 I` if `A` is rank deficient.
pub(crate) fn qr_regularized(n: usize, a: &[f64]) -> Result<(Vec<f64>, Vec<f64>), LinalgError> {
    match qr_positive(n, a) {
        Err(LinalgError::RankDeficient) => {
            let mut reg = a.to_vec();
            for i in 0..n {
                reg[i * n + i] += 1e-6;
            }
            qr_positive(n, &reg)
        }
        other => other,
    }
}

/// Modified Gram-Schmidt with one reorthogonalization pass.
pub(crate) fn qr_positive(n: usize, a: &[f64]) -> Result<(Vec<f64>, Vec<f64>), LinalgError> {
    if a.iter().any(|v| !v.is_finite()) {
        return Err(LinalgError::NonFinite);
    }
    let norm = symcore::frobenius(a);
    let tol = 1e-12 * norm.max(1.0);
    let mut q = vec![0.0; n * n];
    let mut r = vec![0.0; n * n];
    for j in 0..n {
        let mut v: Vec<f64> = (0..n).map(|i| a[i * n + j]).collect();
        for _ in 0..2 {
            for p in 0..j {
                let dot: f64 = (0..n).map(|i| q[i * n + p] * v[i]).sum();
                r[p * n + j] += dot;
                for i in 0..n {
                    v[i] -= dot * q[i * n + p];
                }
            }
        }
        let len = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if len <= tol {
            return Err(LinalgError::RankDeficient);
        }
        r[j * n + j] = len;
        for i in 0..n {
            q[i * n + j] = v[i] / len;
        }
    }
    Ok((q, r))
}

/// `dA = Q tril(G - G^T, -1) R^{-T}` with `G = Q^T dQ`.
fn qr_backward(n: usize, q: &[f64], r: &[f64], dq: &[f64]) -> Vec<f64> {
    let g = symcore::matmul(n, &symcore::transpose(n, q), dq);
    let mut low = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..i {
            low[i * n + j] = g[i * n + j] - g[j * n + i];
        }
    }
    let b = symcore::matmul(n, q, &low);
    // solve X R^T = B row by row: R x^T = b^T, back substitution
    let mut x = vec![0.0; n * n];
    for row in 0..n {
        for i in (0..n).rev() {
            let mut s = b[row * n + i];
            for k in (i + 1)..n {
                s -= r[i * n + k] * x[row * n + k];
            }
            x[row * n + i] = s / r[i * n + i];
        }
    }
    x
}
