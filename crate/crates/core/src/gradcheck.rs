//! Finite-difference verification of the analytic gradients.
//!
//! Each check draws random configurations, perturbs every input coordinate by
//! `±h` and compares the central difference `(f(x+h) - f(x-h)) / 2h` against
//! the analytic gradient. The error of one coordinate is
//! `|analytic - numeric| / max(|analytic|, |numeric|, 1)`: relative for
//! gradients above unit size, absolute below it. Network coordinates whose
//! perturbation flips a ReLU sign are skipped and counted.

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::data::AugmentedBatch;
use crate::error::Result;
use crate::losses::{bhp_loss, bwce_loss, combined_loss, scl_loss, ContrastiveInput};
use crate::network::{CeViews, NetworkParams, NetworkShape};
use crate::rng::{self, Purpose};

pub const TEMPERATURES: [f64; 3] = [0.01, 0.1, 1.0];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct GradcheckSettings {
    /// Set by the caller; experiment files carry a single top-level seed.
    #[serde(skip)]
    pub seed: u64,
    pub cases: usize,
    pub max_batch: usize,
    pub max_classes: usize,
    pub max_dim: usize,
    pub step: f64,
    pub threshold: f64,
    /// Negative control: perturb one analytic coordinate per check.
    #[serde(skip)]
    pub corrupt: bool,
}

impl Default for GradcheckSettings {
    fn default() -> Self {
        Self {
            seed: 0,
            cases: 20,
            max_batch: 6,
            max_classes: 4,
            max_dim: 4,
            step: 1e-5,
            threshold: 1e-6,
            corrupt: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Worst {
    pub case: usize,
    pub coordinate: String,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckSummary {
    pub max_rel_error: f64,
    pub cases: usize,
    pub coordinates: usize,
    pub skipped: usize,
    pub worst: Option<Worst>,
}

impl CheckSummary {
    fn new() -> Self {
        Self {
            max_rel_error: 0.0,
            cases: 0,
            coordinates: 0,
            skipped: 0,
            worst: None,
        }
    }

    fn record(
        &mut self,
        case: usize,
        coordinate: impl FnOnce() -> String,
        analytic: f64,
        numeric: f64,
    ) {
        self.coordinates += 1;
        let err = relative_error(analytic, numeric);
        if err > self.max_rel_error || self.worst.is_none() {
            self.max_rel_error = self.max_rel_error.max(err);
            self.worst = Some(Worst {
                case,
                coordinate: coordinate(),
                analytic,
                numeric,
            });
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub seed: u64,
    pub step: f64,
    pub threshold: f64,
    pub bhp: CheckSummary,
    pub scl: CheckSummary,
    pub bwce: CheckSummary,
    pub network: CheckSummary,
}

impl GradcheckReport {
    pub fn checks(&self) -> [(&'static str, &CheckSummary); 4] {
        [
            ("bhp", &self.bhp),
            ("scl", &self.scl),
            ("bwce", &self.bwce),
            ("network", &self.network),
        ]
    }

    pub fn passed(&self) -> bool {
        self.checks()
            .iter()
            .all(|(_, c)| c.max_rel_error <= self.threshold)
    }

    /// The check with the largest error.
    pub fn worst(&self) -> (&'static str, &CheckSummary) {
        let checks = self.checks();
        let mut best = checks[0];
        for c in checks {
            if c.1.max_rel_error > best.1.max_rel_error {
                best = c;
            }
        }
        best
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0)
}

/// Central difference of `f` along coordinate `i` of `x`; `x` is restored.
pub fn central_difference(
    x: &mut [f64],
    i: usize,
    h: f64,
    mut f: impl FnMut(&[f64]) -> f64,
) -> f64 {
    let orig = x[i];
    x[i] = orig + h;
    let plus = f(x);
    x[i] = orig - h;
    let minus = f(x);
    x[i] = orig;
    (plus - minus) / (2.0 * h)
}

pub fn run(settings: &GradcheckSettings) -> Result<GradcheckReport> {
    Ok(GradcheckReport {
        seed: settings.seed,
        step: settings.step,
        threshold: settings.threshold,
        bhp: check_contrastive(settings, true)?,
        scl: check_contrastive(settings, false)?,
        bwce: check_bwce(settings)?,
        network: check_network(settings)?,
    })
}

fn unit_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Array2<f64> {
    let mut a = Array2::from_shape_simple_fn((n, d), || rng.sample::<f64, _>(StandardNormal));
    for mut row in a.rows_mut() {
        let norm = row.dot(&row).sqrt();
        row.mapv_inplace(|v| v / norm);
    }
    a
}

fn corruption(settings: &GradcheckSettings, case: usize, index: usize, analytic: f64) -> f64 {
    if settings.corrupt && case == 0 && index == 0 {
        1e-3 * analytic.abs().max(1.0)
    } else {
        0.0
    }
}

struct ContrastiveCase {
    tau: f64,
    classes: usize,
    z: Array2<f64>,
    labels: Vec<usize>,
    proxies: Array2<f64>,
    proxy_labels: Vec<usize>,
}

fn contrastive_case(
    settings: &GradcheckSettings,
    case: usize,
    with_proxies: bool,
    salt: u64,
) -> ContrastiveCase {
    let mut rng = rng::stream(settings.seed, Purpose::Verify, salt + case as u64);
    let tau = TEMPERATURES[case % TEMPERATURES.len()];
    let classes = rng.random_range(2..=settings.max_classes.max(2));
    let b = rng.random_range(2..=settings.max_batch.max(2));
    let d = rng.random_range(2..=settings.max_dim.max(2));
    let base: Vec<usize> = (0..b).map(|_| rng.random_range(0..classes)).collect();
    let labels: Vec<usize> = base.iter().chain(&base).copied().collect();
    let z = unit_rows(&mut rng, 2 * b, d);
    let (proxies, proxy_labels) = if with_proxies {
        let counts: Vec<usize> = (0..classes).map(|_| rng.random_range(1..=3)).collect();
        let labels: Vec<usize> = counts
            .iter()
            .enumerate()
            .flat_map(|(c, &n)| std::iter::repeat_n(c, n))
            .collect();
        (unit_rows(&mut rng, labels.len(), d), labels)
    } else {
        (Array2::zeros((0, d)), Vec::new())
    };
    ContrastiveCase {
        tau,
        classes,
        z,
        labels,
        proxies,
        proxy_labels,
    }
}

// Coordinates are perturbed in place, so the index drives both sides.
#[allow(clippy::needless_range_loop)]
fn check_contrastive(settings: &GradcheckSettings, balanced: bool) -> Result<CheckSummary> {
    let mut summary = CheckSummary::new();
    let name = if balanced { "bhp" } else { "scl" };
    for case in 0..settings.cases {
        let cc = contrastive_case(settings, case, balanced, if balanced { 0 } else { 1 << 20 });
        let nz = cc.z.len();
        let d = cc.z.ncols();
        let loss = |x: &[f64]| -> Result<_> {
            let z = ArrayView2::from_shape(cc.z.dim(), &x[..nz]).expect("flat embeddings");
            let p = ArrayView2::from_shape(cc.proxies.dim(), &x[nz..]).expect("flat proxies");
            let input = ContrastiveInput::new(z, &cc.labels, cc.classes, cc.tau)
                .with_proxies(p, &cc.proxy_labels);
            if balanced {
                bhp_loss(&input)
            } else {
                scl_loss(&input)
            }
        };
        let mut x: Vec<f64> = cc.z.iter().chain(cc.proxies.iter()).copied().collect();
        let out = loss(&x)?;
        let analytic: Vec<f64> = out
            .d_embeddings
            .iter()
            .flatten()
            .chain(out.d_proxies.iter().flatten())
            .copied()
            .collect();
        for i in 0..x.len() {
            let numeric = central_difference(&mut x, i, settings.step, |v| {
                loss(v).expect("valid input").value
            });
            let a = analytic[i] + corruption(settings, case, i, analytic[i]);
            let coord = || {
                if i < nz {
                    format!("{name}/case{case}/tau{}/z[{}][{}]", cc.tau, i / d, i % d)
                } else {
                    format!(
                        "{name}/case{case}/tau{}/p[{}][{}]",
                        cc.tau,
                        (i - nz) / d,
                        (i - nz) % d
                    )
                }
            };
            summary.record(case, coord, a, numeric);
        }
        summary.cases += 1;
    }
    Ok(summary)
}

#[allow(clippy::needless_range_loop)]
fn check_bwce(settings: &GradcheckSettings) -> Result<CheckSummary> {
    let mut summary = CheckSummary::new();
    for case in 0..settings.cases {
        let mut rng = rng::stream(settings.seed, Purpose::Verify, (2 << 20) + case as u64);
        let classes = rng.random_range(2..=settings.max_classes.max(2));
        let n = rng.random_range(1..=2 * settings.max_batch.max(1));
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
        let weights: Vec<f64> = (0..classes).map(|_| rng.random_range(0.1..3.0)).collect();
        let mut x: Vec<f64> = (0..n * classes)
            .map(|_| 3.0 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let loss = |v: &[f64]| {
            let logits = ArrayView2::from_shape((n, classes), v).expect("flat logits");
            bwce_loss(logits, &labels, &weights)
        };
        let out = loss(&x)?;
        let analytic = out.d_logits.expect("logit gradient");
        let analytic = analytic.as_slice().expect("standard layout").to_vec();
        for i in 0..x.len() {
            let numeric = central_difference(&mut x, i, settings.step, |v| {
                loss(v).expect("valid input").value
            });
            let a = analytic[i] + corruption(settings, case, i, analytic[i]);
            summary.record(
                case,
                || format!("bwce/case{case}/logit[{}][{}]", i / classes, i % classes),
                a,
                numeric,
            );
        }
        summary.cases += 1;
    }
    Ok(summary)
}

fn check_network(settings: &GradcheckSettings) -> Result<CheckSummary> {
    let mut summary = CheckSummary::new();
    for case in 0..settings.cases {
        let mut rng = rng::stream(settings.seed, Purpose::Verify, (3 << 20) + case as u64);
        let tau = TEMPERATURES[case % TEMPERATURES.len()];
        let classes = rng.random_range(2..=settings.max_classes.max(2));
        let shape = NetworkShape {
            input_dim: rng.random_range(2..=3),
            encoder_hidden: vec![rng.random_range(3..=6), rng.random_range(3..=6)],
            feature_dim: 4,
            proj_hidden: 4,
            embed_dim: 3,
            classes,
        };
        let mut params =
            NetworkParams::<f64>::init(&shape, settings.seed.wrapping_add(case as u64))?;
        // Nonzero biases keep whole rows of the projection head from going dead.
        for t in params.tensors_mut() {
            for v in t.iter_mut() {
                *v += 0.2 * rng.sample::<f64, _>(StandardNormal);
            }
        }
        let b = rng.random_range(2..=settings.max_batch.max(2));
        let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..classes)).collect();
        let view1 = Array2::from_shape_simple_fn((b, shape.input_dim), || {
            rng.sample::<f64, _>(StandardNormal)
        });
        let view2 = view1.mapv(|v| v + 0.1 * rng.sample::<f64, _>(StandardNormal));
        let batch = AugmentedBatch {
            view1,
            view2,
            labels: labels.clone(),
            indices: (0..b).collect(),
        };
        let ce_views = if case % 2 == 0 {
            CeViews::View1
        } else {
            CeViews::Both
        };
        let counts: Vec<usize> = (0..classes).map(|_| rng.random_range(1..=3)).collect();
        let proxy_labels: Vec<usize> = counts
            .iter()
            .enumerate()
            .flat_map(|(c, &n)| std::iter::repeat_n(c, n))
            .collect();
        let proxies = unit_rows(&mut rng, proxy_labels.len(), shape.embed_dim);
        let weights: Vec<f64> = (0..classes).map(|_| rng.random_range(0.1..3.0)).collect();
        let z_labels: Vec<usize> = labels.iter().chain(&labels).copied().collect();

        // Returns the loss, the gradient when requested, and the ReLU pattern.
        let composite = |p: &NetworkParams<f64>,
                         want_grad: bool|
         -> Result<(f64, Option<NetworkParams<f64>>, Vec<bool>)> {
            let trace = p.forward(&batch, true, ce_views)?;
            let z = trace.embeddings().expect("embeddings requested");
            let input = ContrastiveInput::new(z.view(), &z_labels, classes, tau)
                .with_proxies(proxies.view(), &proxy_labels);
            let con = bhp_loss(&input)?;
            let ce = bwce_loss(trace.logits.view(), &trace.logit_labels(&labels), &weights)?;
            let total = combined_loss(&con, &ce, 1.0, 2.0)?;
            let grads = if want_grad {
                let d_logits = total.d_logits.as_ref().expect("classification gradient");
                Some(p.backward(
                    &trace,
                    total.d_embeddings.as_ref().map(|a| a.view()),
                    d_logits.view(),
                )?)
            } else {
                None
            };
            Ok((total.value, grads, trace.activation_pattern()))
        };
        let (_, grads, pattern) = composite(&params, true)?;
        let grads = grads.expect("gradient requested");
        let names: Vec<(String, usize)> = params
            .tensors()
            .iter()
            .map(|(n, v, _)| (n.clone(), v.len()))
            .collect();
        let analytic: Vec<f64> = grads
            .tensors()
            .iter()
            .flat_map(|(_, v, _)| v.iter().copied())
            .collect();

        let mut probe = params.clone();
        let mut flat_index = 0;
        for (t, (name, len)) in names.iter().enumerate() {
            for j in 0..*len {
                let h = settings.step;
                let orig = probe.tensors_mut()[t][j];
                probe.tensors_mut()[t][j] = orig + h;
                let (plus, _, pat_plus) = composite(&probe, false)?;
                probe.tensors_mut()[t][j] = orig - h;
                let (minus, _, pat_minus) = composite(&probe, false)?;
                probe.tensors_mut()[t][j] = orig;
                if pat_plus != pattern || pat_minus != pattern {
                    summary.skipped += 1;
                } else {
                    let numeric = (plus - minus) / (2.0 * h);
                    let a = analytic[flat_index]
                        + corruption(settings, case, flat_index, analytic[flat_index]);
                    summary.record(
                        case,
                        || format!("network/case{case}/tau{tau}/{name}[{j}]"),
                        a,
                        numeric,
                    );
                }
                flat_index += 1;
            }
        }
        summary.cases += 1;
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn central_difference_of_a_cubic() {
        let mut x = vec![2.0, -1.0];
        let g = central_difference(&mut x, 0, 1e-5, |v| v[0].powi(3) + v[1]);
        assert!((g - 12.0).abs() < 1e-8);
        assert_eq!(x, vec![2.0, -1.0]);
    }

    #[test]
    fn error_measure_is_relative_above_unit_scale() {
        assert_eq!(relative_error(200.0, 199.0), 1.0 / 200.0);
        assert_eq!(relative_error(0.5, 0.25), 0.25);
    }

    #[test]
    fn small_suite_passes_and_corruption_is_caught() {
        let mut s = GradcheckSettings {
            cases: 3,
            ..GradcheckSettings::default()
        };
        let report = run(&s).unwrap();
        assert!(report.passed(), "{report:#?}");
        s.corrupt = true;
        let report = run(&s).unwrap();
        assert!(!report.passed());
    }
}
