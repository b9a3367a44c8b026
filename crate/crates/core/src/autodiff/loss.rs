//! Classification losses, averaged over the rows of a score matrix.

use std::rc::Rc;

use super::{AdError, Tensor, Var};

fn check_scores(op: &'static str, s: &Tensor, labels: &[usize]) -> Result<(usize, usize), AdError> {
    let (n, k) = match s.shape() {
        [n, k] => (*n, *k),
        other => return Err(AdError::ShapeMismatch { op, left: other.to_vec(), right: vec![labels.len()] }),
    };
    if n != labels.len() {
        return Err(AdError::ShapeMismatch { op, left: s.shape().to_vec(), right: vec![labels.len()] });
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
        return Err(AdError::LabelOutOfRange { label: bad, classes: k });
    }
    Ok((n, k))
}

impl<'t> Var<'t> {
    /// Mean of `-log softmax(logits_i)[y_i]` over rows.
    pub fn cross_entropy(self, labels: Rc<Vec<usize>>) -> Result<Var<'t>, AdError> {
        let s = self.value();
        let (n, k) = check_scores("cross_entropy", &s, &labels)?;
        let mut probs = vec![0.0; n * k];
        let mut total = 0.0;
        for i in 0..n {
            let row = s.row(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            total += lse - row[labels[i]];
            for j in 0..k {
                probs[i * k + j] = (row[j] - lse).exp();
            }
        }
        let denom = n.max(1) as f64;
        self.tape.push(
            "cross_entropy",
            Tensor::scalar(total / denom),
            &[self],
            Box::new(move |c| {
                let g = c.grad.item() / denom;
                let mut d = probs.clone();
                for (i, &y) in labels.iter().enumerate() {
                    d[i * k + y] -= 1.0;
                }
                d.iter_mut().for_each(|v| *v *= g);
                vec![Some(Tensor::from_parts(vec![n, k], d))]
            }),
        )
    }

    /// Mean over rows of `(1/K) sum_{k != y} max(0, margin - s_y + s_k)`.
    pub fn multi_margin(self, labels: Rc<Vec<usize>>, margin: f64) -> Result<Var<'t>, AdError> {
        let s = self.value();
        let (n, k) = check_scores("multi_margin", &s, &labels)?;
        let mut total = 0.0;
        let mut active = vec![false; n * k];
        for i in 0..n {
            let row = s.row(i);
            let y = labels[i];
            for j in (0..k).filter(|&j| j != y) {
                let h = margin - row[y] + row[j];
                if h > 0.0 {
                    total += h;
                    active[i * k + j] = true;
                }
            }
        }
        let scale = 1.0 / (n.max(1) as f64 * k as f64);
        self.tape.push(
            "multi_margin",
            Tensor::scalar(total * scale),
            &[self],
            Box::new(move |c| {
                let g = c.grad.item() * scale;
                let mut d = vec![0.0; n * k];
                for (i, &y) in labels.iter().enumerate() {
                    for j in 0..k {
                        if active[i * k + j] {
                            d[i * k + j] += g;
                            d[i * k + y] -= g;
                        }
                    }
                }
                vec![Some(Tensor::from_parts(vec![n, k], d))]
            }),
        )
    }

    /// `(1 / (N K^2)) sum_i sum_k sum_{l != k} max(0, 1 - s_{i,y_i} + s_{i,l})`,
    /// the hinge term of the SVM-style head taken literally over `(k, l)` pairs.
    pub fn pairwise_hinge(self, labels: Rc<Vec<usize>>) -> Result<Var<'t>, AdError> {
        let s = self.value();
        let (n, k) = check_scores("pairwise_hinge", &s, &labels)?;
        let mut total = 0.0;
        // multiplicity of each active (i, l) hinge across the k-sum
        let mut counts = vec![0u32; n * k];
        for i in 0..n {
            let row = s.row(i);
            let sy = row[labels[i]];
            for kk in 0..k {
                for l in (0..k).filter(|&l| l != kk) {
                    let h = 1.0 - sy + row[l];
                    if h > 0.0 {
                        total += h;
                        counts[i * k + l] += 1;
                    }
                }
            }
        }
        let denom = n.max(1) as f64 * (k * k) as f64;
        self.tape.push(
            "pairwise_hinge",
            Tensor::scalar(total / denom),
            &[self],
            Box::new(move |c| {
                let g = c.grad.item() / denom;
                let mut d = vec![0.0; n * k];
                for (i, &y) in labels.iter().enumerate() {
                    for l in 0..k {
                        let m = counts[i * k + l] as f64;
                        d[i * k + l] += g * m;
                        d[i * k + y] -= g * m;
                    }
                }
                vec![Some(Tensor::from_parts(vec![n, k], d))]
            }),
        )
    }
}
