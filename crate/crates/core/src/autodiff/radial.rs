//! Row-wise radial maps `v -> g(|v|) v` used by the Poincare ball.

use super::{AdError, Tensor, Var};

/// Points of the unit ball are kept at norm at most `1 - 1e-5`.
pub const BALL_MAX_NORM: f64 = 1.0 - 1e-5;

const SERIES_RADIUS: f64 = 1e-3;

/// Which radial map to apply to each row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RadialMap {
    /// `tanh(|v|) v / |v|`, clipped to the ball margin.
    Expmap0,
    /// `artanh(|x|) x / |x|`, with `|x|` clipped to the ball margin first.
    Logmap0,
    /// Rescales rows whose norm exceeds the ball margin.
    Project,
}

impl RadialMap {
    /// Returns `(g(r), g'(r) / r)`.
    pub fn coefficients(self, r: f64) -> (f64, f64) {
        let max = BALL_MAX_NORM;
        match self {
            RadialMap::Expmap0 => {
                if r < SERIES_RADIUS {
                    let r2 = r * r;
                    (1.0 - r2 / 3.0 + 2.0 * r2 * r2 / 15.0, -2.0 / 3.0 + 8.0 * r2 / 15.0)
                } else if r.tanh() > max {
                    (max / r, -max / (r * r * r))
                } else {
                    let t = r.tanh();
                    let sech2 = 1.0 - t * t;
                    (t / r, (r * sech2 - t) / (r * r * r))
                }
            }
            RadialMap::Logmap0 => {
                if r < SERIES_RADIUS {
                    let r2 = r * r;
                    (1.0 + r2 / 3.0 + r2 * r2 / 5.0, 2.0 / 3.0 + 4.0 * r2 / 5.0)
                } else if r > max {
                    let a = max.atanh();
                    (a / r, -a / (r * r * r))
                } else {
                    let a = r.atanh();
                    (a / r, (r / (1.0 - r * r) - a) / (r * r * r))
                }
            }
            RadialMap::Project => {
                if r > max {
                    (max / r, -max / (r * r * r))
                } else {
                    (1.0, 0.0)
                }
            }
        }
    }

    fn name(self) -> &'static str {
        match self {
            RadialMap::Expmap0 => "expmap0",
            RadialMap::Logmap0 => "logmap0",
            RadialMap::Project => "project_ball",
        }
    }
}

impl<'t> Var<'t> {
    /// Applies a [`RadialMap`] to every row (last axis) of the tensor.
    pub fn radial(self, map: RadialMap) -> Result<Var<'t>, AdError> {
        let x = self.value();
        let d = *x.shape().last().ok_or_else(|| AdError::InvalidArgument("radial map on a scalar".into()))?;
        let mut out = Vec::with_capacity(x.len());
        let mut coeffs = Vec::with_capacity(x.len() / d.max(1));
        for row in x.data().chunks(d.max(1)) {
            let r = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            let (g, dg) = map.coefficients(r);
            out.extend(row.iter().map(|v| g * v));
            coeffs.push((g, dg));
        }
        self.tape.push(
            map.name(),
            Tensor::from_parts(x.shape().to_vec(), out),
            &[self],
            Box::new(move |c| {
                let (x, gr) = (c.inputs[0].data(), c.grad.data());
                let mut dx = Vec::with_capacity(x.len());
                for ((row, grow), &(g, dg)) in x.chunks(d).zip(gr.chunks(d)).zip(&coeffs) {
                    let dot: f64 = row.iter().zip(grow).map(|(a, b)| a * b).sum();
                    dx.extend(row.iter().zip(grow).map(|(v, gv)| g * gv + dg * dot * v));
                }
                vec![Some(Tensor::from_parts(c.inputs[0].shape().to_vec(), dx))]
            }),
        )
    }

    pub fn expmap0(self) -> Result<Var<'t>, AdError> {
        self.radial(RadialMap::Expmap0)
    }

    pub fn logmap0(self) -> Result<Var<'t>, AdError> {
        self.radial(RadialMap::Logmap0)
    }

    pub fn project_ball(self) -> Result<Var<'t>, AdError> {
        self.radial(RadialMap::Project)
    }

    /// Mobius addition `x (+) y` on rows of two `[n, d]` tensors (curvature -1):
    /// `((1 + 2<x,y> + |y|^2) x + (1 - |x|^2) y) / (1 + 2<x,y> + |x|^2 |y|^2)`,
    /// projected back inside the ball.
    pub fn mobius_add(self, other: Var<'t>) -> Result<Var<'t>, AdError> {
        let xy = self.mul(other)?.sum_last()?;
        let x2 = self.mul(self)?.sum_last()?;
        let y2 = other.mul(other)?.sum_last()?;
        let two_xy = xy.scale(2.0)?;
        let coef_x = two_xy.add(y2)?.add_scalar(1.0)?;
        let coef_y = x2.neg()?.add_scalar(1.0)?;
        let num = self.row_scale(coef_x)?.add(other.row_scale(coef_y)?)?;
        let den = two_xy.add(x2.mul(y2)?)?.add_scalar(1.0)?;
        num.row_scale(den.recip()?)?.project_ball()
    }
}
