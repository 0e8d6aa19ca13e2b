//! Balanced hybrid-proxy contrastive loss and the plain supervised contrastive
//! loss it generalizes.
//!
//! Both losses run over a point set `S` (sample embeddings, plus proxies for
//! the balanced loss). For an anchor `i` of class `c` with positives
//! `P(i) = {j ∈ S : y_j = c, j ≠ i}`:
//!
//! ```text
//! loss  = -1/M Σ_i [ mean_{j∈P(i)} s_i·s_j/τ  -  log E_i ]
//! E_i   = Σ_{k≠i} w_ik exp(s_i·s_k/τ)
//! ```
//!
//! where `M` counts anchors with at least one positive. The balanced loss uses
//! the class-averaging weight `w_ik = 1/max(1, n_{y_k} - [y_k = c])` (`n_c` the
//! number of points of class `c` in `S`), so every class enters the partition
//! term as a mean; the supervised contrastive loss uses `w_ik = 1`.

use ndarray::{s, Array2, ArrayView2, Axis};

use super::LossOutput;
use crate::error::{Error, Result};
use crate::proxy::ProxyBank;
use crate::scalar::{dot, sorted_sum, Scalar};

#[derive(Clone, Debug)]
pub struct ContrastiveInput<'a, F> {
    /// `2B x d` unit rows.
    pub embeddings: ArrayView2<'a, F>,
    pub labels: &'a [usize],
    /// `P x d` unit rows; zero rows for the sample-only losses.
    pub proxies: ArrayView2<'a, F>,
    pub proxy_labels: &'a [usize],
    pub classes: usize,
    pub tau: F,
}

impl<'a, F: Scalar> ContrastiveInput<'a, F> {
    pub fn new(embeddings: ArrayView2<'a, F>, labels: &'a [usize], classes: usize, tau: F) -> Self {
        let d = embeddings.ncols();
        Self {
            embeddings,
            labels,
            proxies: ArrayView2::from_shape((0, d), &[]).expect("empty view"),
            proxy_labels: &[],
            classes,
            tau,
        }
    }

    pub fn with_proxies(mut self, proxies: ArrayView2<'a, F>, proxy_labels: &'a [usize]) -> Self {
        self.proxies = proxies;
        self.proxy_labels = proxy_labels;
        self
    }

    pub fn with_bank(self, bank: &'a ProxyBank<F>) -> Self {
        self.with_proxies(bank.vectors(), bank.labels())
    }
}

/// Bookkeeping from one balanced-loss evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct BhpStats {
    /// Anchors with at least one positive (the outer normalizer).
    pub anchors: usize,
    pub skipped: usize,
    /// Points of each class in the batch: `2B_c + N^p_c`.
    pub class_sizes: Vec<usize>,
    /// Per class, the positive-term coefficients summed over its anchors,
    /// divided by the class size. Every class with at least two points gets
    /// exactly one unit of mass.
    pub positive_mass: Vec<f64>,
}

/// Balanced hybrid-proxy loss over sample embeddings and proxies.
pub fn bhp_loss<F: Scalar>(input: &ContrastiveInput<F>) -> Result<LossOutput<F>> {
    bhp_loss_detailed(input).map(|(out, _)| out)
}

pub fn bhp_loss_detailed<F: Scalar>(
    input: &ContrastiveInput<F>,
) -> Result<(LossOutput<F>, BhpStats)> {
    evaluate(input, true)
}

/// Supervised contrastive loss over sample embeddings only (anchor excluded
/// from its own denominator).
pub fn scl_loss<F: Scalar>(input: &ContrastiveInput<F>) -> Result<LossOutput<F>> {
    if input.proxies.nrows() > 0 {
        return Err(Error::Invalid("scl_loss takes no proxies".into()));
    }
    let (mut out, _) = evaluate(input, false)?;
    out.d_proxies = None;
    Ok(out)
}

fn validate<F: Scalar>(input: &ContrastiveInput<F>) -> Result<()> {
    if !(input.tau > F::zero() && input.tau.is_finite()) {
        return Err(Error::config("tau", "temperature must be positive"));
    }
    let z = &input.embeddings;
    if input.labels.len() != z.nrows() {
        return Err(Error::Shape {
            context: "embedding labels",
            expected: vec![z.nrows()],
            actual: vec![input.labels.len()],
        });
    }
    if input.proxy_labels.len() != input.proxies.nrows() {
        return Err(Error::Shape {
            context: "proxy labels",
            expected: vec![input.proxies.nrows()],
            actual: vec![input.proxy_labels.len()],
        });
    }
    if input.proxies.nrows() > 0 && input.proxies.ncols() != z.ncols() {
        return Err(Error::Shape {
            context: "proxy dimension",
            expected: vec![z.ncols()],
            actual: vec![input.proxies.ncols()],
        });
    }
    if let Some(&label) = input
        .labels
        .iter()
        .chain(input.proxy_labels)
        .find(|&&l| l >= input.classes)
    {
        return Err(Error::LabelOutOfRange {
            label,
            classes: input.classes,
        });
    }
    if z.nrows() + input.proxies.nrows() < 2 {
        return Err(Error::Invalid(
            "contrastive loss needs at least 2 points".into(),
        ));
    }
    if z.iter().chain(input.proxies.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Invalid(
            "contrastive input has non-finite entries".into(),
        ));
    }
    Ok(())
}

fn evaluate<F: Scalar>(
    input: &ContrastiveInput<F>,
    balanced: bool,
) -> Result<(LossOutput<F>, BhpStats)> {
    validate(input)?;
    let nz = input.embeddings.nrows();
    let points = if input.proxies.nrows() > 0 {
        ndarray::concatenate(Axis(0), &[input.embeddings, input.proxies]).expect("widths checked")
    } else {
        input.embeddings.to_owned()
    };
    let labels: Vec<usize> = input
        .labels
        .iter()
        .chain(input.proxy_labels)
        .copied()
        .collect();
    let n = labels.len();
    let tau = input.tau;

    let mut class_sizes = vec![0usize; input.classes];
    for &l in &labels {
        class_sizes[l] += 1;
    }

    // scaled similarities; the diagonal is never read
    let mut sim = Array2::<F>::zeros((n, n));
    for i in 0..n {
        let si = points.row(i);
        let si = si.as_slice().expect("standard layout");
        for k in (i + 1)..n {
            let v = dot(si, points.row(k).as_slice().expect("standard layout")) / tau;
            sim[[i, k]] = v;
            sim[[k, i]] = v;
        }
    }

    let anchors = labels.iter().filter(|&&c| class_sizes[c] > 1).count();
    if anchors == 0 {
        return Err(Error::DegenerateBatch);
    }
    let inv_m = F::one() / F::of(anchors as f64);

    // weight of a class-c' point in the partition term of a class-c anchor
    let weight = |anchor_class: usize, other_class: usize| -> F {
        if !balanced {
            return F::one();
        }
        let n = class_sizes[other_class] - usize::from(anchor_class == other_class);
        F::one() / F::of(n.max(1) as f64)
    };

    let mut coef = Array2::<F>::zeros((n, n));
    let mut anchor_terms = Vec::with_capacity(anchors);
    let mut positive_mass = vec![0.0f64; input.classes];
    let mut partition = Vec::with_capacity(n);
    let mut positives = Vec::with_capacity(n);
    for i in 0..n {
        let c = labels[i];
        let n_pos = class_sizes[c] - 1;
        if n_pos == 0 {
            continue;
        }
        let row = sim.row(i);
        let m = (0..n)
            .filter(|&k| k != i)
            .map(|k| row[k])
            .fold(F::neg_infinity(), F::max);
        partition.clear();
        positives.clear();
        for k in (0..n).filter(|&k| k != i) {
            let t = weight(c, labels[k]) * (row[k] - m).exp();
            coef[[i, k]] = t;
            partition.push(t);
            if labels[k] == c {
                positives.push(row[k]);
            }
        }
        let total = sorted_sum(&mut partition);
        let log_e = m + total.ln();
        let pos_norm = F::one() / F::of(n_pos as f64);
        let pos_mean = sorted_sum(&mut positives) * pos_norm;
        anchor_terms.push(pos_mean - log_e);

        let pos_coef = inv_m * pos_norm;
        for k in (0..n).filter(|&k| k != i) {
            let mut g = coef[[i, k]] / total * inv_m;
            if labels[k] == c {
                g -= pos_coef;
            }
            coef[[i, k]] = g;
        }
        positive_mass[c] += n_pos as f64 * (1.0 / n_pos as f64);
    }
    let value = -(sorted_sum(&mut anchor_terms) * inv_m);

    // d a_ik / d s_i = s_k / τ and d a_ik / d s_k = s_i / τ
    let sym = &coef + &coef.t();
    let grad = sym.dot(&points).mapv(|v| v / tau);

    for (c, mass) in positive_mass.iter_mut().enumerate() {
        if class_sizes[c] > 0 {
            *mass /= class_sizes[c] as f64;
        }
    }
    let stats = BhpStats {
        anchors,
        skipped: n - anchors,
        class_sizes,
        positive_mass,
    };
    let out = LossOutput {
        value,
        d_embeddings: Some(grad.slice(s![..nz, ..]).to_owned()),
        d_proxies: Some(grad.slice(s![nz.., ..]).to_owned()),
        d_logits: None,
    };
    Ok((out, stats))
}
