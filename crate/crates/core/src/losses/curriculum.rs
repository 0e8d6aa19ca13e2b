//! Three-stage class weights for the classification loss.
//!
//! Epochs are numbered from 1. Stage 1 (`e <= E1`) weights every class 1.
//! Stage 2 (`E1 < e <= E2`) ramps towards inverse class frequency,
//! `base_c^((e-E1)/(E2-E1))` with `base_c = (C/N_c) / Σ 1/N_c'`. Stage 3
//! (`E2 < e <= E`) restarts from 1 and ramps towards inverse validation F1,
//! `diff_c^((e-E2)/(E-E2))` with `diff_c = (C/f_c) / Σ 1/f_c'`.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Validation F1 scores are clamped to at least this before inversion.
pub const F1_FLOOR: f64 = 0.01;

#[derive(Clone, Debug, PartialEq)]
pub struct CurriculumState<'a> {
    pub epoch: usize,
    pub e1: usize,
    pub e2: usize,
    pub total: usize,
    pub class_counts: &'a [usize],
    /// Latest per-class validation F1; required in stage 3.
    pub val_f1: Option<&'a [f64]>,
}

pub fn curriculum_weights<F: Scalar>(state: &CurriculumState) -> Result<Vec<F>> {
    let CurriculumState {
        epoch,
        e1,
        e2,
        total,
        class_counts,
        val_f1,
    } = *state;
    if !(0 < e1 && e1 < e2 && e2 < total) {
        return Err(Error::config(
            "e1/e2/epochs",
            format!("need 0 < E1 < E2 < E, got {e1}, {e2}, {total}"),
        ));
    }
    if class_counts.is_empty() || class_counts.contains(&0) {
        return Err(Error::Invalid("class counts must all be positive".into()));
    }
    let classes = class_counts.len();
    if epoch <= e1 {
        return Ok(vec![F::one(); classes]);
    }
    let (inverse, exponent): (Vec<f64>, f64) = if epoch <= e2 {
        (
            class_counts.iter().map(|&n| 1.0 / n as f64).collect(),
            (epoch - e1) as f64 / (e2 - e1) as f64,
        )
    } else {
        let f1 = val_f1
            .ok_or_else(|| Error::Invalid(format!("epoch {epoch} needs validation f1 scores")))?;
        if f1.len() != classes {
            return Err(Error::Shape {
                context: "validation f1",
                expected: vec![classes],
                actual: vec![f1.len()],
            });
        }
        if f1.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(Error::Invalid("validation f1 must lie in [0, 1]".into()));
        }
        let exponent = (epoch.min(total) - e2) as f64 / (total - e2) as f64;
        (
            f1.iter().map(|&f| 1.0 / f.max(F1_FLOOR)).collect(),
            exponent,
        )
    };
    let sum: f64 = inverse.iter().sum();
    Ok(inverse
        .iter()
        .map(|&inv| F::of((classes as f64 * inv / sum).powf(exponent)))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(epoch: usize, counts: &[usize]) -> CurriculumState<'_> {
        CurriculumState {
            epoch,
            e1: 10,
            e2: 20,
            total: 30,
            class_counts: counts,
            val_f1: None,
        }
    }

    #[test]
    fn stage_one_is_uniform() {
        for e in 0..=10 {
            let w: Vec<f64> = curriculum_weights(&state(e, &[900, 100])).unwrap();
            assert_eq!(w, vec![1.0, 1.0]);
        }
    }

    #[test]
    fn stage_two_end_points() {
        let w: Vec<f64> = curriculum_weights(&state(20, &[900, 100])).unwrap();
        assert!(
            (w[0] - 0.2).abs() < 1e-12 && (w[1] - 1.8).abs() < 1e-12,
            "{w:?}"
        );
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-12);
        let w: Vec<f64> = curriculum_weights(&state(15, &[900, 100])).unwrap();
        assert!((w[0] - 0.2f64.sqrt()).abs() < 1e-12 && (w[1] - 1.8f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn stage_three_clamps_zero_f1() {
        let f1 = [0.9, 0.0, 0.5];
        let mut s = state(30, &[500, 50, 20]);
        s.val_f1 = Some(&f1);
        let w: Vec<f64> = curriculum_weights(&s).unwrap();
        assert!(w.iter().all(|x| x.is_finite()));
        let inv = [1.0 / 0.9, 100.0, 2.0];
        let sum: f64 = inv.iter().sum();
        for (wc, ic) in w.iter().zip(inv) {
            assert!((wc - 3.0 * ic / sum).abs() < 1e-12);
        }
        assert!((w.iter().sum::<f64>() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn stage_three_requires_f1() {
        assert!(curriculum_weights::<f64>(&state(21, &[10, 5])).is_err());
    }

    #[test]
    fn invalid_bounds_and_counts() {
        let mut s = state(5, &[10, 5]);
        s.e1 = 20;
        assert!(curriculum_weights::<f64>(&s).is_err());
        assert!(curriculum_weights::<f64>(&state(5, &[10, 0])).is_err());
    }
}
