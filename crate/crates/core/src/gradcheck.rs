//! Central finite-difference gradient checking.
//!
//! The numeric side only ever evaluates the forward pass, so it is
//! independent of every backward rule it is used to check.

use crate::autodiff::{AdError, Tape, Tensor, Var};

/// Outcome of comparing analytic and numeric gradients for one input.
#[derive(Debug, Clone)]
pub struct GradCheck {
    pub analytic: Tensor,
    pub numeric: Tensor,
    /// `|a - n| / max(|a|, |n|, 1e-6)` in the Euclidean norm.
    pub relative_error: f64,
}

/// Checks `d f / d inputs[k]` for every `k` with central differences of step `h`.
///
/// `f` receives a fresh tape and one parameter leaf per input and must
/// return a scalar.
pub fn check<F>(inputs: &[Tensor], h: f64, f: F) -> Result<Vec<GradCheck>, AdError>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>, AdError>,
{
    let analytic: Vec<Tensor> = {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.param(t.clone())).collect();
        let loss = f(&tape, &vars)?;
        let grads = tape.backward(loss)?;
        vars.iter().map(|&v| grads.wrt(v)).collect()
    };
    let eval = |values: &[Tensor]| -> Result<f64, AdError> {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = values.iter().map(|t| tape.param(t.clone())).collect();
        Ok(f(&tape, &vars)?.item())
    };
    let mut results = Vec::with_capacity(inputs.len());
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (k, a) in analytic.into_iter().enumerate() {
        let mut numeric = Tensor::zeros(inputs[k].shape());
        for i in 0..inputs[k].len() {
            let orig = inputs[k].data()[i];
            work[k].data_mut()[i] = orig + h;
            let up = eval(&work)?;
            work[k].data_mut()[i] = orig - h;
            let down = eval(&work)?;
            work[k].data_mut()[i] = orig;
            numeric.data_mut()[i] = (up - down) / (2.0 * h);
        }
        let diff: f64 = a.data().iter().zip(numeric.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        let scale = a.norm_sq().sqrt().max(numeric.norm_sq().sqrt());
        results.push(GradCheck { relative_error: diff / scale.max(1e-6), analytic: a, numeric });
    }
    Ok(results)
}

/// Largest relative error across all inputs.
pub fn max_relative_error(results: &[GradCheck]) -> f64 {
    results.iter().map(|r| r.relative_error).fold(0.0, f64::max)
}
