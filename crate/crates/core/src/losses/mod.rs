//! Training objectives. Every loss returns its value together with exact
//! gradients with respect to each input it consumes.

mod contrastive;
mod cross_entropy;
mod curriculum;

pub use contrastive::{bhp_loss, bhp_loss_detailed, scl_loss, BhpStats, ContrastiveInput};
pub use cross_entropy::{bwce_loss, ce_loss};
pub use curriculum::{curriculum_weights, CurriculumState, F1_FLOOR};

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct LossOutput<F> {
    pub value: F,
    pub d_embeddings: Option<Array2<F>>,
    pub d_proxies: Option<Array2<F>>,
    pub d_logits: Option<Array2<F>>,
}

impl<F: Scalar> LossOutput<F> {
    pub fn zero() -> Self {
        Self {
            value: F::zero(),
            d_embeddings: None,
            d_proxies: None,
            d_logits: None,
        }
    }

    pub fn is_finite(&self) -> bool {
        let all =
            |a: &Option<Array2<F>>| a.as_ref().is_none_or(|m| m.iter().all(|v| v.is_finite()));
        self.value.is_finite()
            && all(&self.d_embeddings)
            && all(&self.d_proxies)
            && all(&self.d_logits)
    }
}

fn scaled<F: Scalar>(a: &Option<Array2<F>>, s: F) -> Option<Array2<F>> {
    a.as_ref().map(|m| m.mapv(|v| v * s))
}

/// `λ·contrastive + μ·classification`, with gradients combined the same way.
pub fn combined_loss<F: Scalar>(
    contrastive: &LossOutput<F>,
    classification: &LossOutput<F>,
    lambda: F,
    mu: F,
) -> Result<LossOutput<F>> {
    if !(lambda >= F::zero() && mu >= F::zero()) {
        return Err(Error::config(
            "lambda/mu",
            "loss weights must be non-negative",
        ));
    }
    Ok(LossOutput {
        value: lambda * contrastive.value + mu * classification.value,
        d_embeddings: scaled(&contrastive.d_embeddings, lambda),
        d_proxies: scaled(&contrastive.d_proxies, lambda),
        d_logits: scaled(&classification.d_logits, mu),
    })
}
