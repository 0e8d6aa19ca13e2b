//! Class-weighted softmax cross-entropy over logits.

use ndarray::{Array2, ArrayView2};

use super::LossOutput;
use crate::error::{Error, Result};
use crate::scalar::{sorted_sum, Scalar};

/// `1/n Σ_i w_{y_i} CE(softmax(logits_i), y_i)` over the `n` logit rows.
pub fn bwce_loss<F: Scalar>(
    logits: ArrayView2<F>,
    labels: &[usize],
    weights: &[F],
) -> Result<LossOutput<F>> {
    if weights.len() != logits.ncols() {
        return Err(Error::Shape {
            context: "class weights",
            expected: vec![logits.ncols()],
            actual: vec![weights.len()],
        });
    }
    weighted(logits, labels, Some(weights))
}

/// Mean softmax cross-entropy.
pub fn ce_loss<F: Scalar>(logits: ArrayView2<F>, labels: &[usize]) -> Result<LossOutput<F>> {
    weighted(logits, labels, None)
}

fn weighted<F: Scalar>(
    logits: ArrayView2<F>,
    labels: &[usize],
    weights: Option<&[F]>,
) -> Result<LossOutput<F>> {
    let (n, classes) = logits.dim();
    if labels.len() != n {
        return Err(Error::Shape {
            context: "logit labels",
            expected: vec![n],
            actual: vec![labels.len()],
        });
    }
    if n == 0 {
        return Err(Error::Invalid("cross-entropy over an empty batch".into()));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::LabelOutOfRange { label, classes });
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::Invalid("logits must be finite".into()));
    }
    let inv_n = F::one() / F::of(n as f64);
    let mut terms = Vec::with_capacity(n);
    let mut grad = Array2::zeros((n, classes));
    let mut exps = Vec::with_capacity(classes);
    for (i, row) in logits.rows().into_iter().enumerate() {
        let y = labels[i];
        let m = row.iter().copied().fold(F::neg_infinity(), F::max);
        exps.clear();
        exps.extend(row.iter().map(|&l| (l - m).exp()));
        let mut sorted = exps.clone();
        let total = sorted_sum(&mut sorted);
        let lse = m + total.ln();
        let ce = lse - row[y];
        let w = weights.map_or(F::one(), |w| w[y]);
        terms.push(w * ce);
        let scale = w * inv_n;
        for (k, &e) in exps.iter().enumerate() {
            let p = e / total;
            let target = if k == y { F::one() } else { F::zero() };
            grad[[i, k]] = scale * (p - target);
        }
    }
    Ok(LossOutput {
        value: sorted_sum(&mut terms) * inv_n,
        d_embeddings: None,
        d_proxies: None,
        d_logits: Some(grad),
    })
}
