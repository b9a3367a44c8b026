//! GCN, GAT, Cheb, SGC and GIN layers over any [`GeometryContext`].
//!
//! Every layer follows the same pattern: feature transform, aggregation in
//! the tangent space at the origin (identity for SPD), then bias and
//! nonlinearity. On SPD the transform is `M P M^T` with `M` orthogonal, the
//! bias is gyro-addition of `B = exp(beta)` and the nonlinearity floors
//! eigenvalues, so every layer output stays positive definite.

pub mod graph;

use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AdError, Tape, Tensor, Var};
use crate::manifolds::tape::propagate;
use crate::manifolds::{GeometryContext, ManifoldError, Nonlinearity, TransformVars};
use crate::params::ParamSet;
use crate::symcore::{SpdMatrix, SymMatrix};

pub use graph::{gcn_weights, Graph, GraphOps, Split};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GnnError {
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Ad(#[from] AdError),
    #[error(transparent)]
    Manifold(#[from] ManifoldError),
}

/// GAT attention uses LeakyReLU with this negative slope.
pub const GAT_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Gcn,
    Gat,
    Cheb,
    Sgc,
    Gin,
}

impl Arch {
    pub const ALL: [Arch; 5] = [Arch::Gcn, Arch::Gat, Arch::Cheb, Arch::Sgc, Arch::Gin];

    pub fn name(&self) -> &'static str {
        match self {
            Arch::Gcn => "gcn",
            Arch::Gat => "gat",
            Arch::Cheb => "cheb",
            Arch::Sgc => "sgc",
            Arch::Gin => "gin",
        }
    }
}

impl std::str::FromStr for Arch {
    type Err = GnnError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Arch::ALL
            .into_iter()
            .find(|a| a.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| GnnError::InvalidConfig(format!("unknown architecture '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub arch: Arch,
    pub geometry: GeometryContext,
    pub input_dim: usize,
    pub num_layers: usize,
    /// Dropout on the raw input features.
    pub dropout: f64,
    pub nonlinearity: Nonlinearity,
    /// Propagation steps of the SGC block.
    pub sgc_hops: usize,
}

impl ModelConfig {
    pub fn new(arch: Arch, geometry: GeometryContext, input_dim: usize) -> Self {
        ModelConfig {
            arch,
            geometry,
            input_dim,
            num_layers: 2,
            dropout: 0.0,
            nonlinearity: Nonlinearity::TgReEig,
            sgc_hops: 2,
        }
    }

    fn validate(&self) -> Result<(), GnnError> {
        self.geometry.new()?;
        if self.input_dim == 0 {
            return Err(GnnError::InvalidConfig("input dimension must be positive".into()));
        }
        if self.num_layers == 0 {
            return Err(GnnError::InvalidConfig("at least one layer is required".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(GnnError::InvalidConfig(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        let floor = self.nonlinearity.floor();
        if !(floor > 0.0 && floor.is_finite()) {
            return Err(GnnError::InvalidConfig(format!("eigenvalue floor {floor} must be positive")));
        }
        Ok(())
    }
}

// ---- layers -------------------------------------------------------------

fn gcn_k<'t>(z: Var<'t>, ops: &GraphOps) -> Var<'t> {
    z.tape().constant(ops.gcn_weights.clone())
}

/// Transform, weighted tangent aggregation with `k_ij`, bias, nonlinearity.
pub fn gcn_layer<'t>(
    g: &GeometryContext,
    z: Var<'t>,
    ops: &GraphOps,
    w: TransformVars<'t>,
    bias: Var<'t>,
    nl: Nonlinearity,
) -> Result<Var<'t>, AdError> {
    let h = g.transform(z, w)?;
    let p = g.aggregate(h, &ops.src, &ops.dst, gcn_k(h, ops))?;
    g.bias_nonlin(p, bias, nl)
}

/// Attention coefficients `alpha_ij = softmax_{j in N(i)} LeakyReLU(a_dst . u_i + a_src . u_j)`
/// with `u` the compact tangent vectors of `h`, in the edge order of `ops`.
/// Returns the flat tangent of `h` together with `alpha`.
pub fn gat_attention<'t>(
    g: &GeometryContext,
    h: Var<'t>,
    ops: &GraphOps,
    a_dst: Var<'t>,
    a_src: Var<'t>,
) -> Result<(Var<'t>, Var<'t>), AdError> {
    let n = ops.num_nodes;
    let t = g.to_tangent(h)?;
    let u = g.compact_tangent(t)?;
    let s_dst = u.linear(a_dst)?.reshape(&[n])?;
    let s_src = u.linear(a_src)?.reshape(&[n])?;
    let logits = s_dst.gather_rows(ops.dst.clone())?.add(s_src.gather_rows(ops.src.clone())?)?.leaky_relu(GAT_SLOPE)?;
    let alpha = logits.segment_softmax(ops.offsets.clone())?;
    Ok((t, alpha))
}

/// GCN with `k_ij` replaced by learned attention (single head).
#[allow(clippy::too_many_arguments)]
pub fn gat_layer<'t>(
    g: &GeometryContext,
    z: Var<'t>,
    ops: &GraphOps,
    w: TransformVars<'t>,
    a_dst: Var<'t>,
    a_src: Var<'t>,
    bias: Var<'t>,
    nl: Nonlinearity,
) -> Result<Var<'t>, AdError> {
    let h = g.transform(z, w)?;
    let (t, alpha) = gat_attention(g, h, ops, a_dst, a_src)?;
    let p = g.from_tangent(propagate(t, &ops.src, &ops.dst, alpha, ops.num_nodes)?)?;
    g.bias_nonlin(p, bias, nl)
}

/// First-order Chebyshev filter in the tangent space:
/// `p_i = W0 t_i + W1 sum_j L_ij t_j` with `L = -D^{-1/2} A D^{-1/2}`
/// (self-loops excluded), then bias and nonlinearity.
pub fn cheb_layer<'t>(
    g: &GeometryContext,
    z: Var<'t>,
    ops: &GraphOps,
    w0: TransformVars<'t>,
    w1: TransformVars<'t>,
    bias: Var<'t>,
    nl: Nonlinearity,
) -> Result<Var<'t>, AdError> {
    let t = g.to_tangent(z)?;
    let lw = z.tape().constant(ops.cheb_weights.clone());
    let lt = propagate(t, &ops.nbr_src, &ops.nbr_dst, lw, ops.num_nodes)?;
    let s = g.tangent_transform(t, w0)?.add(g.tangent_transform(lt, w1)?)?;
    g.bias_nonlin(g.from_tangent(s)?, bias, nl)
}

/// `hops` rounds of `k_ij` propagation in the tangent space, then one
/// transform, bias and nonlinearity.
pub fn sgc_block<'t>(
    g: &GeometryContext,
    z: Var<'t>,
    ops: &GraphOps,
    hops: usize,
    w: TransformVars<'t>,
    bias: Var<'t>,
    nl: Nonlinearity,
) -> Result<Var<'t>, AdError> {
    let mut t = g.to_tangent(z)?;
    let k = gcn_k(z, ops);
    for _ in 0..hops {
        t = propagate(t, &ops.src, &ops.dst, k, ops.num_nodes)?;
    }
    let h = g.transform(g.from_tangent(t)?, w)?;
    g.bias_nonlin(h, bias, nl)
}

/// `p_i = (1 + eps) t_i + sum_{j in N(i), j != i} t_j` in the tangent space,
/// then transform, nonlinearity, transform, bias and nonlinearity.
#[allow(clippy::too_many_arguments)]
pub fn gin_layer<'t>(
    g: &GeometryContext,
    z: Var<'t>,
    ops: &GraphOps,
    eps: Var<'t>,
    wa: TransformVars<'t>,
    wb: TransformVars<'t>,
    bias: Var<'t>,
    nl: Nonlinearity,
) -> Result<Var<'t>, AdError> {
    let n = ops.num_nodes;
    let t = g.to_tangent(z)?;
    let self_coef = eps.reshape(&[1])?.gather_rows(Rc::new(vec![0; n]))?.add_scalar(1.0)?;
    let ones = z.tape().constant(Tensor::full(&[ops.nbr_src.len()], 1.0));
    let s = t.row_scale(self_coef)?.add(propagate(t, &ops.nbr_src, &ops.nbr_dst, ones, n)?)?;
    let h = g.transform(g.from_tangent(s)?, wa)?;
    let h = g.transform(g.nonlinearity(h, nl)?, wb)?;
    g.bias_nonlin(h, bias, nl)
}

// ---- model --------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
enum TransformIds {
    One(usize),
    Four([usize; 4]),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
enum LayerIds {
    Gcn { w: TransformIds, b: usize },
    Gat { w: TransformIds, a_dst: usize, a_src: usize, b: usize },
    Cheb { w0: TransformIds, w1: TransformIds, b: usize },
    Sgc { w: TransformIds, b: usize },
    Gin { eps: usize, wa: TransformIds, wb: TransformIds, b: usize },
}

/// Input map followed by the graph layers. Parameters live in a separate
/// [`ParamSet`]; the model records which entries it owns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub config: ModelConfig,
    w_in: usize,
    layers: Vec<LayerIds>,
}

pub(crate) fn uniform<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], fan_in: usize) -> Tensor {
    let a = (3.0 / fan_in.max(1) as f64).sqrt();
    let len = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..len).map(|_| rng.random_range(-a..a)).collect()).expect("finite init")
}

impl Model {
    /// Adds freshly initialized parameters to `params`: fan-in scaled
    /// uniform weights, zero biases (the gyro-identity on SPD) and `eps = 0`.
    pub fn init<R: Rng + ?Sized>(config: ModelConfig, params: &mut ParamSet, rng: &mut R) -> Result<Self, GnnError> {
        config.validate()?;
        let g = config.geometry;
        let d = g.ambient_dim();
        let w_in = params.add("input.w", uniform(rng, &[d, config.input_dim], config.input_dim));
        let transform = |params: &mut ParamSet, rng: &mut R, name: String| match g {
            GeometryContext::Euclidean(_) | GeometryContext::Hyperbolic(_) => {
                TransformIds::One(params.add(name, uniform(rng, &[d, d], d)))
            }
            GeometryContext::Spd(n) => TransformIds::One(params.add(name, uniform(rng, &[n, n], n))),
            GeometryContext::Product(m) => TransformIds::Four(
                ["11", "12", "21", "22"].map(|s| params.add(format!("{name}{s}"), uniform(rng, &[m, m], m))),
            ),
        };
        let bias_shape = match g {
            GeometryContext::Spd(n) => vec![n, n],
            _ => vec![d],
        };
        let bias = |params: &mut ParamSet, p: &str| params.add(format!("{p}.b"), Tensor::zeros(&bias_shape));
        let count = if config.arch == Arch::Sgc { 1 } else { config.num_layers };
        let mut layers = Vec::with_capacity(count);
        for l in 0..count {
            let p = format!("layer{l}");
            layers.push(match config.arch {
                Arch::Gcn => {
                    let w = transform(params, rng, format!("{p}.w"));
                    LayerIds::Gcn { w, b: bias(params, &p) }
                }
                Arch::Sgc => {
                    let w = transform(params, rng, format!("{p}.w"));
                    LayerIds::Sgc { w, b: bias(params, &p) }
                }
                Arch::Gat => {
                    let w = transform(params, rng, format!("{p}.w"));
                    let a_dst = params.add(format!("{p}.a_dst"), uniform(rng, &[1, d], d));
                    let a_src = params.add(format!("{p}.a_src"), uniform(rng, &[1, d], d));
                    LayerIds::Gat { w, a_dst, a_src, b: bias(params, &p) }
                }
                Arch::Cheb => {
                    let w0 = transform(params, rng, format!("{p}.w0"));
                    let w1 = transform(params, rng, format!("{p}.w1"));
                    LayerIds::Cheb { w0, w1, b: bias(params, &p) }
                }
                Arch::Gin => {
                    let eps = params.add(format!("{p}.eps"), Tensor::zeros(&[1]));
                    let wa = transform(params, rng, format!("{p}.wa"));
                    let wb = transform(params, rng, format!("{p}.wb"));
                    LayerIds::Gin { eps, wa, wb, b: bias(params, &p) }
                }
            });
        }
        Ok(Model { config, w_in, layers })
    }

    pub fn geometry(&self) -> GeometryContext {
        self.config.geometry
    }

    fn tv<'t>(&self, vars: &[Var<'t>], ids: TransformIds) -> TransformVars<'t> {
        match (self.config.geometry, ids) {
            (GeometryContext::Spd(_), TransformIds::One(i)) => TransformVars::Isometry(vars[i]),
            (_, TransformIds::One(i)) => TransformVars::Matrix(vars[i]),
            (_, TransformIds::Four(ids)) => TransformVars::Blocks(ids.map(|i| vars[i])),
        }
    }

    /// Runs the input map and every layer on `features[N, input_dim]`.
    /// Returns the embedding after the input map followed by the output of
    /// each layer; the last entry is the final embedding.
    pub fn forward<'t, R: Rng + ?Sized>(
        &self,
        vars: &[Var<'t>],
        ops: &GraphOps,
        features: Var<'t>,
        rng: &mut R,
        train: bool,
    ) -> Result<Vec<Var<'t>>, AdError> {
        let g = self.config.geometry;
        let nl = self.config.nonlinearity;
        let x = features.dropout(self.config.dropout, rng, train)?;
        let mut z = g.input_map(x, vars[self.w_in])?;
        let mut outs = vec![z];
        for layer in &self.layers {
            z = match *layer {
                LayerIds::Gcn { w, b } => gcn_layer(&g, z, ops, self.tv(vars, w), vars[b], nl)?,
                LayerIds::Gat { w, a_dst, a_src, b } => {
                    gat_layer(&g, z, ops, self.tv(vars, w), vars[a_dst], vars[a_src], vars[b], nl)?
                }
                LayerIds::Cheb { w0, w1, b } => cheb_layer(&g, z, ops, self.tv(vars, w0), self.tv(vars, w1), vars[b], nl)?,
                LayerIds::Sgc { w, b } => sgc_block(&g, z, ops, self.config.sgc_hops, self.tv(vars, w), vars[b], nl)?,
                LayerIds::Gin { eps, wa, wb, b } => {
                    gin_layer(&g, z, ops, vars[eps], self.tv(vars, wa), self.tv(vars, wb), vars[b], nl)?
                }
            };
            outs.push(z);
        }
        Ok(outs)
    }
}

// ---- plain-value entry points --------------------------------------------

/// `exp(U + U^T)` where `U` is the zero matrix with its upper triangle
/// filled row-wise by `W_in x`; diagonal entries end up doubled.
pub fn input_map_to_spd(x: &[f64], w_in: &Tensor) -> Result<SpdMatrix, GnnError> {
    let m = match w_in.shape() {
        [m, d] if *d == x.len() => *m,
        s => {
            return Err(GnnError::Manifold(ManifoldError::DimensionMismatch {
                expected: x.len(),
                found: s.get(1).copied().unwrap_or(0),
            }))
        }
    };
    let n = crate::autodiff::ops::side_from_upper_len(m)
        .ok_or_else(|| GnnError::InvalidConfig(format!("{m} rows is not n(n+1)/2")))?;
    let tape = Tape::new();
    let xv = tape.constant(Tensor::matrix(1, x.len(), x.to_vec())?);
    let z = GeometryContext::Spd(n).input_map(xv, tape.constant(w_in.clone()))?;
    spd_from_rows(&z.value(), n).map(|mut v| v.remove(0))
}

fn spd_from_rows(t: &Tensor, n: usize) -> Result<Vec<SpdMatrix>, GnnError> {
    t.data()
        .chunks(n * n)
        .map(|c| Ok(SpdMatrix::new(SymMatrix::new(n, c.to_vec()).map_err(ManifoldError::from)?).map_err(ManifoldError::from)?))
        .collect()
}

/// `ReLU(sum_j k_ij W x_j + b)` for `x[N, f]`, `W[out, f]`, `b[out]`.
pub fn euclidean_gcn_layer(graph: &Graph, x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor, GnnError> {
    let tape = Tape::new();
    let g = GeometryContext::Euclidean(w.shape()[0]);
    let out = gcn_layer(
        &g,
        tape.constant(x.clone()),
        &graph.ops(),
        TransformVars::Matrix(tape.constant(w.clone())),
        tape.constant(b.clone()),
        Nonlinearity::TgReEig,
    )?;
    Ok((*out.value()).clone())
}

/// SPD GCN layer on explicit matrices: `phi((exp(sum_j k_ij log(M Z_j M^T))) (+) exp(beta))`.
pub fn spd_gcn_layer(
    graph: &Graph,
    z: &[SpdMatrix],
    m_raw: &Tensor,
    beta: &SymMatrix,
    nl: Nonlinearity,
) -> Result<Vec<SpdMatrix>, GnnError> {
    let n = beta.dim();
    if z.len() != graph.num_nodes() {
        return Err(GnnError::InvalidGraph(format!("{} embeddings for {} nodes", z.len(), graph.num_nodes())));
    }
    let data = z.iter().flat_map(|p| p.as_slice().to_vec()).collect();
    let tape = Tape::new();
    let zv = tape.constant(Tensor::new(vec![z.len(), n, n], data)?);
    let out = gcn_layer(
        &GeometryContext::Spd(n),
        zv,
        &graph.ops(),
        TransformVars::Isometry(tape.constant(m_raw.clone())),
        tape.constant(Tensor::matrix(n, n, beta.as_slice().to_vec())?),
        nl,
    )?;
    spd_from_rows(&out.value(), n)
}
