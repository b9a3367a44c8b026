//! Elementwise and structural primitives.

use std::rc::Rc;

use rand::Rng;

use super::{AdError, Tensor, Var};

/// Pointwise scalar functions with known derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Unary {
    Relu,
    LeakyRelu(f64),
    Exp,
    Ln,
    Tanh,
    Recip,
    Sqrt,
    Square,
}

impl Unary {
    fn apply(self, x: f64) -> f64 {
        match self {
            Unary::Relu => x.max(0.0),
            Unary::LeakyRelu(slope) => {
                if x > 0.0 {
                    x
                } else {
                    slope * x
                }
            }
            Unary::Exp => x.exp(),
            Unary::Ln => x.ln(),
            Unary::Tanh => x.tanh(),
            Unary::Recip => 1.0 / x,
            Unary::Sqrt => x.sqrt(),
            Unary::Square => x * x,
        }
    }

    /// Derivative given input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            // subgradient 0 at the kink
            Unary::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Unary::LeakyRelu(slope) => {
                if x > 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            Unary::Exp => y,
            Unary::Ln => 1.0 / x,
            Unary::Tanh => 1.0 - y * y,
            Unary::Recip => -y * y,
            Unary::Sqrt => 0.5 / y,
            Unary::Square => 2.0 * x,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Unary::Relu => "relu",
            Unary::LeakyRelu(_) => "leaky_relu",
            Unary::Exp => "exp",
            Unary::Ln => "ln",
            Unary::Tanh => "tanh",
            Unary::Recip => "recip",
            Unary::Sqrt => "sqrt",
            Unary::Square => "square",
        }
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<(), AdError> {
    if a.shape() != b.shape() {
        return Err(AdError::ShapeMismatch { op, left: a.shape().to_vec(), right: b.shape().to_vec() });
    }
    Ok(())
}

/// Number of rows `n` of a symmetric matrix whose upper triangle has `m` entries.
pub(crate) fn side_from_upper_len(m: usize) -> Option<usize> {
    let n = (((8 * m + 1) as f64).sqrt() as usize).saturating_sub(1) / 2;
    (n * (n + 1) / 2 == m && n > 0).then_some(n)
}

impl<'t> Var<'t> {
    pub fn add(self, other: Var<'t>) -> Result<Var<'t>, AdError> {
        let (a, b) = (self.value(), other.value());
        same_shape("add", &a, &b)?;
        let out = a.zip_map(&b, |x, y| x + y);
        self.tape.push(
            "add",
            out,
            &[self, other],
            Box::new(|c| vec![Some(c.grad.clone()), Some(c.grad.clone())]),
        )
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>, AdError> {
        let (a, b) = (self.value(), other.value());
        same_shape("sub", &a, &b)?;
        let out = a.zip_map(&b, |x, y| x - y);
        self.tape.push(
            "sub",
            out,
            &[self, other],
            Box::new(|c| vec![Some(c.grad.clone()), Some(c.grad.map(|g| -g))]),
        )
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>, AdError> {
        let (a, b) = (self.value(), other.value());
        same_shape("mul", &a, &b)?;
        let out = a.zip_map(&b, |x, y| x * y);
        self.tape.push(
            "mul",
            out,
            &[self, other],
            Box::new(|c| {
                vec![
                    c.needs[0].then(|| c.grad.zip_map(&c.inputs[1], |g, y| g * y)),
                    c.needs[1].then(|| c.grad.zip_map(&c.inputs[0], |g, x| g * x)),
                ]
            }),
        )
    }

    pub fn scale(self, factor: f64) -> Result<Var<'t>, AdError> {
        let out = self.value().map(|x| x * factor);
        self.tape.push("scale", out, &[self], Box::new(move |c| vec![Some(c.grad.map(|g| g * factor))]))
    }

    pub fn neg(self) -> Result<Var<'t>, AdError> {
        self.scale(-1.0)
    }

    pub fn add_scalar(self, offset: f64) -> Result<Var<'t>, AdError> {
        let out = self.value().map(|x| x + offset);
        self.tape.push("add_scalar", out, &[self], Box::new(|c| vec![Some(c.grad.clone())]))
    }

    pub fn unary(self, f: Unary) -> Result<Var<'t>, AdError> {
        let out = self.value().map(|x| f.apply(x));
        self.tape.push(
            f.name(),
            out,
            &[self],
            Box::new(move |c| {
                let x = c.inputs[0].data();
                let y = c.output.data();
                let g = c.grad.data();
                let data = (0..g.len()).map(|i| g[i] * f.derivative(x[i], y[i])).collect();
                vec![Some(Tensor::from_parts(c.grad.shape().to_vec(), data))]
            }),
        )
    }

    pub fn relu(self) -> Result<Var<'t>, AdError> {
        self.unary(Unary::Relu)
    }

    pub fn leaky_relu(self, slope: f64) -> Result<Var<'t>, AdError> {
        self.unary(Unary::LeakyRelu(slope))
    }

    pub fn exp(self) -> Result<Var<'t>, AdError> {
        self.unary(Unary::Exp)
    }

    pub fn ln(self) -> Result<Var<'t>, AdError> {
        self.unary(Unary::Ln)
    }

    pub fn tanh(self) -> Result<Var<'t>, AdError> {
        self.unary(Unary::Tanh)
    }

    pub fn recip(self) -> Result<Var<'t>, AdError> {
        self.unary(Unary::Recip)
    }

    /// `x[n, ...] + b[...]`, broadcasting `b` over the leading axis.
    pub fn add_bias(self, bias: Var<'t>) -> Result<Var<'t>, AdError> {
        let (x, b) = (self.value(), bias.value());
        if x.ndim() != b.ndim() + 1 || x.shape()[1..] != *b.shape() {
            return Err(AdError::ShapeMismatch {
                op: "add_bias",
                left: x.shape().to_vec(),
                right: b.shape().to_vec(),
            });
        }
        let w = b.len();
        let mut out = x.as_ref().clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v += b.data()[i % w];
        }
        self.tape.push(
            "add_bias",
            out,
            &[self, bias],
            Box::new(move |c| {
                let db = c.needs[1].then(|| {
                    let mut acc = vec![0.0; w];
                    for (i, g) in c.grad.data().iter().enumerate() {
                        acc[i % w] += g;
                    }
                    Tensor::from_parts(c.inputs[1].shape().to_vec(), acc)
                });
                vec![Some(c.grad.clone()), db]
            }),
        )
    }

    /// Multiplies row `i` of `x[n, ...]` by `w[i]`.
    pub fn row_scale(self, weights: Var<'t>) -> Result<Var<'t>, AdError> {
        let (x, w) = (self.value(), weights.value());
        let (n, width) = x.rows();
        if w.shape() != [n] {
            return Err(AdError::ShapeMismatch {
                op: "row_scale",
                left: x.shape().to_vec(),
                right: w.shape().to_vec(),
            });
        }
        let mut out = x.as_ref().clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v *= w.data()[i / width];
        }
        self.tape.push(
            "row_scale",
            out,
            &[self, weights],
            Box::new(move |c| {
                let (x, w, g) = (&c.inputs[0], &c.inputs[1], c.grad);
                let dx = c.needs[0].then(|| {
                    let data = g.data().iter().enumerate().map(|(i, gv)| gv * w.data()[i / width]).collect();
                    Tensor::from_parts(x.shape().to_vec(), data)
                });
                let dw = c.needs[1].then(|| {
                    let mut acc = vec![0.0; n];
                    for (i, (gv, xv)) in g.data().iter().zip(x.data()).enumerate() {
                        acc[i / width] += gv * xv;
                    }
                    Tensor::from_parts(vec![n], acc)
                });
                vec![dx, dw]
            }),
        )
    }

    pub fn sum(self) -> Result<Var<'t>, AdError> {
        let x = self.value();
        let total = x.data().iter().sum();
        let shape = x.shape().to_vec();
        self.tape.push(
            "sum",
            Tensor::scalar(total),
            &[self],
            Box::new(move |c| vec![Some(Tensor::full(&shape, c.grad.item()))]),
        )
    }

    pub fn mean(self) -> Result<Var<'t>, AdError> {
        let n = self.value().len().max(1) as f64;
        self.sum()?.scale(1.0 / n)
    }

    /// Sums over the last axis.
    pub fn sum_last(self) -> Result<Var<'t>, AdError> {
        let x = self.value();
        let Some((&d, lead)) = x.shape().split_last() else {
            return Err(AdError::InvalidArgument("sum_last on a scalar".into()));
        };
        let out: Vec<f64> = x.data().chunks(d.max(1)).map(|r| r.iter().sum()).collect();
        let lead = lead.to_vec();
        let in_shape = x.shape().to_vec();
        self.tape.push(
            "sum_last",
            Tensor::from_parts(lead, out),
            &[self],
            Box::new(move |c| {
                let g = c.grad.data();
                let data = (0..g.len() * d).map(|i| g[i / d]).collect();
                vec![Some(Tensor::from_parts(in_shape.clone(), data))]
            }),
        )
    }

    /// Sums over the leading axis: `[n, ...] -> [...]`.
    pub fn sum_rows(self) -> Result<Var<'t>, AdError> {
        let x = self.value();
        let (n, width) = x.rows();
        let mut acc = vec![0.0; width];
        for i in 0..n {
            for (a, v) in acc.iter_mut().zip(x.row(i)) {
                *a += v;
            }
        }
        let in_shape = x.shape().to_vec();
        self.tape.push(
            "sum_rows",
            Tensor::from_parts(in_shape[1..].to_vec(), acc),
            &[self],
            Box::new(move |c| {
                let g = c.grad.data();
                let data = (0..n * width).map(|i| g[i % width]).collect();
                vec![Some(Tensor::from_parts(in_shape.clone(), data))]
            }),
        )
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t>, AdError> {
        let x = self.value();
        let in_shape = x.shape().to_vec();
        let out = x.as_ref().clone().reshaped(shape.to_vec())?;
        self.tape.push(
            "reshape",
            out,
            &[self],
            Box::new(move |c| vec![Some(Tensor::from_parts(in_shape.clone(), c.grad.data().to_vec()))]),
        )
    }

    /// Copy that stops gradient flow.
    pub fn detach(self) -> Var<'t> {
        self.tape.constant(self.value().as_ref().clone())
    }

    /// Swaps the last two axes.
    pub fn transpose(self) -> Result<Var<'t>, AdError> {
        let x = self.value();
        let out = transpose_last2(&x)?;
        self.tape.push(
            "transpose",
            out,
            &[self],
            Box::new(|c| vec![Some(transpose_last2(c.grad).expect("shape checked in forward"))]),
        )
    }

    /// `(X + X^T) / 2` over the last two axes.
    pub fn symmetrize(self) -> Result<Var<'t>, AdError> {
        let t = self.transpose()?;
        self.add(t)?.scale(0.5)
    }

    /// Trace over the last two axes.
    pub fn trace(self) -> Result<Var<'t>, AdError> {
        let x = self.value();
        let (batch, n) = square_batch("trace", &x)?;
        let out: Vec<f64> =
            (0..batch).map(|b| (0..n).map(|i| x.data()[b * n * n + i * n + i]).sum()).collect();
        let out_shape = x.shape()[..x.ndim() - 2].to_vec();
        let in_shape = x.shape().to_vec();
        self.tape.push(
            "trace",
            Tensor::from_parts(out_shape, out),
            &[self],
            Box::new(move |c| {
                let mut d = Tensor::zeros(&in_shape);
                for b in 0..batch {
                    let g = c.grad.data()[b];
                    for i in 0..n {
                        d.data_mut()[b * n * n + i * n + i] = g;
                    }
                }
                vec![Some(d)]
            }),
        )
    }

    pub fn frobenius_norm_sq(self) -> Result<Var<'t>, AdError> {
        let x = self.value();
        let total = x.norm_sq();
        self.tape.push(
            "frobenius_norm_sq",
            Tensor::scalar(total),
            &[self],
            Box::new(|c| {
                let g = c.grad.item();
                vec![Some(c.inputs[0].map(|v| 2.0 * g * v))]
            }),
        )
    }

    /// Row `e` of the output is row `index[e]` of the input.
    pub fn gather_rows(self, index: Rc<Vec<usize>>) -> Result<Var<'t>, AdError> {
        let x = self.value();
        let (n, width) = x.rows();
        if let Some(&bad) = index.iter().find(|&&i| i >= n) {
            return Err(AdError::IndexOutOfRange { index: bad, len: n });
        }
        let mut data = Vec::with_capacity(index.len() * width);
        for &i in index.iter() {
            data.extend_from_slice(x.row(i));
        }
        let mut shape = x.shape().to_vec();
        shape[0] = index.len();
        let in_shape = x.shape().to_vec();
        self.tape.push(
            "gather_rows",
            Tensor::from_parts(shape, data),
            &[self],
            Box::new(move |c| {
                let mut d = Tensor::zeros(&in_shape);
                let g = c.grad.data();
                for (e, &i) in index.iter().enumerate() {
                    let dst = &mut d.data_mut()[i * width..(i + 1) * width];
                    for (a, v) in dst.iter_mut().zip(&g[e * width..(e + 1) * width]) {
                        *a += v;
                    }
                }
                vec![Some(d)]
            }),
        )
    }

    /// Adds row `e` of the input into row `index[e]` of an `n_out`-row output.
    pub fn scatter_add_rows(self, index: Rc<Vec<usize>>, n_out: usize) -> Result<Var<'t>, AdError> {
        let x = self.value();
        let (e, width) = x.rows();
        if index.len() != e {
            return Err(AdError::ShapeMismatch {
                op: "scatter_add_rows",
                left: x.shape().to_vec(),
                right: vec![index.len()],
            });
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= n_out) {
            return Err(AdError::IndexOutOfRange { index: bad, len: n_out });
        }
        let mut shape = x.shape().to_vec();
        shape[0] = n_out;
        let mut out = Tensor::zeros(&shape);
        for (row, &i) in index.iter().enumerate() {
            let dst = &mut out.data_mut()[i * width..(i + 1) * width];
            for (a, v) in dst.iter_mut().zip(x.row(row)) {
                *a += v;
            }
        }
        let in_shape = x.shape().to_vec();
        self.tape.push(
            "scatter_add_rows",
            out,
            &[self],
            Box::new(move |c| {
                let mut data = Vec::with_capacity(index.len() * width);
                for &i in index.iter() {
                    data.extend_from_slice(&c.grad.data()[i * width..(i + 1) * width]);
                }
                vec![Some(Tensor::from_parts(in_shape.clone(), data))]
            }),
        )
    }

    /// Softmax of a flat vector within segments `offsets[s]..offsets[s + 1]`.
    pub fn segment_softmax(self, offsets: Rc<Vec<usize>>) -> Result<Var<'t>, AdError> {
        let x = self.value();
        if x.ndim() != 1 || offsets.last().copied() != Some(x.len()) {
            return Err(AdError::ShapeMismatch {
                op: "segment_softmax",
                left: x.shape().to_vec(),
                right: vec![offsets.last().copied().unwrap_or(0)],
            });
        }
        let mut out = vec![0.0; x.len()];
        for w in offsets.windows(2) {
            softmax_into(&x.data()[w[0]..w[1]], &mut out[w[0]..w[1]]);
        }
        self.tape.push(
            "segment_softmax",
            Tensor::from_parts(x.shape().to_vec(), out),
            &[self],
            Box::new(move |c| {
                let (y, g) = (c.output.data(), c.grad.data());
                let mut d = vec![0.0; y.len()];
                for w in offsets.windows(2) {
                    softmax_backward(&y[w[0]..w[1]], &g[w[0]..w[1]], &mut d[w[0]..w[1]]);
                }
                vec![Some(Tensor::from_parts(c.output.shape().to_vec(), d))]
            }),
        )
    }

    /// Softmax along the last axis.
    pub fn softmax(self) -> Result<Var<'t>, AdError> {
        let x = self.value();
        let d = *x.shape().last().ok_or_else(|| AdError::InvalidArgument("softmax on a scalar".into()))?;
        let mut out = vec![0.0; x.len()];
        for (src, dst) in x.data().chunks(d).zip(out.chunks_mut(d)) {
            softmax_into(src, dst);
        }
        self.tape.push(
            "softmax",
            Tensor::from_parts(x.shape().to_vec(), out),
            &[self],
            Box::new(move |c| {
                let mut dx = vec![0.0; c.output.len()];
                for ((y, g), dst) in
                    c.output.data().chunks(d).zip(c.grad.data().chunks(d)).zip(dx.chunks_mut(d))
                {
                    softmax_backward(y, g, dst);
                }
                vec![Some(Tensor::from_parts(c.output.shape().to_vec(), dx))]
            }),
        )
    }

    /// Concatenates along the last axis; leading shapes must agree.
    pub fn concat(parts: &[Var<'t>]) -> Result<Var<'t>, AdError> {
        let first = parts.first().ok_or_else(|| AdError::InvalidArgument("concat of nothing".into()))?;
        let tape = first.tape;
        let values: Vec<Rc<Tensor>> = parts.iter().map(|p| p.value()).collect();
        let lead = values[0].shape()[..values[0].ndim() - 1].to_vec();
        let mut widths = Vec::with_capacity(parts.len());
        for v in &values {
            if v.ndim() != lead.len() + 1 || v.shape()[..lead.len()] != lead[..] {
                return Err(AdError::ShapeMismatch {
                    op: "concat",
                    left: values[0].shape().to_vec(),
                    right: v.shape().to_vec(),
                });
            }
            widths.push(*v.shape().last().unwrap());
        }
        let rows: usize = lead.iter().product();
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (v, &w) in values.iter().zip(&widths) {
                data.extend_from_slice(&v.data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        tape.push(
            "concat",
            Tensor::from_parts(shape, data),
            parts,
            Box::new(move |c| {
                let g = c.grad.data();
                let mut outs: Vec<Vec<f64>> = widths.iter().map(|w| Vec::with_capacity(rows * w)).collect();
                for r in 0..rows {
                    let mut off = r * total;
                    for (o, &w) in outs.iter_mut().zip(&widths) {
                        o.extend_from_slice(&g[off..off + w]);
                        off += w;
                    }
                }
                outs.into_iter()
                    .zip(c.inputs)
                    .map(|(o, inp)| Some(Tensor::from_parts(inp.shape().to_vec(), o)))
                    .collect()
            }),
        )
    }

    /// Stacks `[n]` vectors into an `[n, k]` matrix.
    pub fn stack_columns(parts: &[Var<'t>]) -> Result<Var<'t>, AdError> {
        let cols = parts
            .iter()
            .map(|p| {
                let s = p.shape();
                p.reshape(&[s.iter().product(), 1])
            })
            .collect::<Result<Vec<_>, _>>()?;
        Var::concat(&cols)
    }

    /// Columns `start..start + len` of the last axis.
    pub fn slice_last(self, start: usize, len: usize) -> Result<Var<'t>, AdError> {
        let x = self.value();
        let d = *x.shape().last().ok_or_else(|| AdError::InvalidArgument("slice of a scalar".into()))?;
        if start + len > d {
            return Err(AdError::IndexOutOfRange { index: start + len, len: d });
        }
        let rows = x.len() / d.max(1);
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&x.data()[r * d + start..r * d + start + len]);
        }
        let mut shape = x.shape().to_vec();
        *shape.last_mut().unwrap() = len;
        let in_shape = x.shape().to_vec();
        self.tape.push(
            "slice_last",
            Tensor::from_parts(shape, data),
            &[self],
            Box::new(move |c| {
                let mut dx = Tensor::zeros(&in_shape);
                for r in 0..rows {
                    dx.data_mut()[r * d + start..r * d + start + len]
                        .copy_from_slice(&c.grad.data()[r * len..(r + 1) * len]);
                }
                vec![Some(dx)]
            }),
        )
    }

    /// Inverted dropout: zeroes entries with probability `p` and rescales the
    /// rest by `1 / (1 - p)`. Identity when `train` is false or `p == 0`.
    pub fn dropout<R: Rng + ?Sized>(self, p: f64, rng: &mut R, train: bool) -> Result<Var<'t>, AdError> {
        if !(0.0..1.0).contains(&p) {
            return Err(AdError::InvalidArgument(format!("dropout probability {p} not in [0, 1)")));
        }
        if !train || p == 0.0 {
            return Ok(self);
        }
        let x = self.value();
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..x.len()).map(|_| if rng.random::<f64>() < p { 0.0 } else { keep }).collect();
        let out = Tensor::from_parts(
            x.shape().to_vec(),
            x.data().iter().zip(&mask).map(|(v, m)| v * m).collect(),
        );
        self.tape.push(
            "dropout",
            out,
            &[self],
            Box::new(move |c| {
                let data = c.grad.data().iter().zip(&mask).map(|(g, m)| g * m).collect();
                vec![Some(Tensor::from_parts(c.grad.shape().to_vec(), data))]
            }),
        )
    }

    /// Row-wise upper triangle `(X11..X1n, X22.., Xnn)` of `[..., n, n]`.
    pub fn vec_upper(self) -> Result<Var<'t>, AdError> {
        let x = self.value();
        let (batch, n) = square_batch("vec_upper", &x)?;
        let m = n * (n + 1) / 2;
        let mut data = Vec::with_capacity(batch * m);
        for b in 0..batch {
            for i in 0..n {
                for j in i..n {
                    data.push(x.data()[b * n * n + i * n + j]);
                }
            }
        }
        let mut shape = x.shape()[..x.ndim() - 2].to_vec();
        shape.push(m);
        let in_shape = x.shape().to_vec();
        self.tape.push(
            "vec_upper",
            Tensor::from_parts(shape, data),
            &[self],
            Box::new(move |c| {
                let mut dx = Tensor::zeros(&in_shape);
                let g = c.grad.data();
                let mut k = 0;
                for b in 0..batch {
                    for i in 0..n {
                        for j in i..n {
                            dx.data_mut()[b * n * n + i * n + j] = g[k];
                            k += 1;
                        }
                    }
                }
                vec![Some(dx)]
            }),
        )
    }

    /// Fills the upper triangle of a zero matrix row-wise with `v[..., m]`
    /// and returns `A + A^T`, so diagonal entries are doubled.
    pub fn sym_from_upper(self) -> Result<Var<'t>, AdError> {
        let v = self.value();
        let m = *v.shape().last().ok_or_else(|| AdError::InvalidArgument("sym_from_upper on a scalar".into()))?;
        let n = side_from_upper_len(m).ok_or_else(|| {
            AdError::InvalidArgument(format!("{m} is not a triangular number n(n+1)/2"))
        })?;
        let batch = v.len() / m;
        let mut data = vec![0.0; batch * n * n];
        for b in 0..batch {
            let mut k = 0;
            for i in 0..n {
                for j in i..n {
                    let val = v.data()[b * m + k];
                    if i == j {
                        data[b * n * n + i * n + i] = 2.0 * val;
                    } else {
                        data[b * n * n + i * n + j] = val;
                        data[b * n * n + j * n + i] = val;
                    }
                    k += 1;
                }
            }
        }
        let mut shape = v.shape()[..v.ndim() - 1].to_vec();
        shape.extend([n, n]);
        let in_shape = v.shape().to_vec();
        self.tape.push(
            "sym_from_upper",
            Tensor::from_parts(shape, data),
            &[self],
            Box::new(move |c| {
                let g = c.grad.data();
                let mut dv = Vec::with_capacity(batch * m);
                for b in 0..batch {
                    for i in 0..n {
                        for j in i..n {
                            let base = b * n * n;
                            dv.push(if i == j {
                                2.0 * g[base + i * n + i]
                            } else {
                                g[base + i * n + j] + g[base + j * n + i]
                            });
                        }
                    }
                }
                vec![Some(Tensor::from_parts(in_shape.clone(), dv))]
            }),
        )
    }
}

fn softmax_into(src: &[f64], dst: &mut [f64]) {
    let max = src.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = (s - max).exp();
        total += *d;
    }
    for d in dst.iter_mut() {
        *d /= total;
    }
}

fn softmax_backward(y: &[f64], g: &[f64], dst: &mut [f64]) {
    let dot: f64 = y.iter().zip(g).map(|(a, b)| a * b).sum();
    for ((d, &yi), &gi) in dst.iter_mut().zip(y).zip(g) {
        *d = yi * (gi - dot);
    }
}

/// `(batch, n)` for a tensor of shape `[..., n, n]`.
pub(crate) fn square_batch(op: &'static str, x: &Tensor) -> Result<(usize, usize), AdError> {
    let s = x.shape();
    if s.len() < 2 || s[s.len() - 1] != s[s.len() - 2] {
        return Err(AdError::ShapeMismatch { op, left: s.to_vec(), right: vec![] });
    }
    let n = s[s.len() - 1];
    Ok((x.len() / (n * n).max(1), n))
}

pub(crate) fn transpose_last2(x: &Tensor) -> Result<Tensor, AdError> {
    let s = x.shape();
    if s.len() < 2 {
        return Err(AdError::ShapeMismatch { op: "transpose", left: s.to_vec(), right: vec![] });
    }
    let (r, c) = (s[s.len() - 2], s[s.len() - 1]);
    let batch = x.len() / (r * c).max(1);
    let mut data = vec![0.0; x.len()];
    for b in 0..batch {
        let base = b * r * c;
        for i in 0..r {
            for j in 0..c {
                data[base + j * r + i] = x.data()[base + i * c + j];
            }
        }
    }
    let mut shape = s.to_vec();
    let len = shape.len();
    shape.swap(len - 2, len - 1);
    Ok(Tensor::from_parts(shape, data))
}
