//! The training loop.
//!
//! Per iteration: draw a two-view batch, run the shared network, evaluate
//! `λ·contrastive + μ·weighted CE`, step `θ` with SGD plus weight decay, and
//! add the learning-rate-scaled proxy gradient to the bank's accumulator.
//! Per epoch: apply the proxy cycle update, validate, and keep the parameters
//! with the best validation accuracy (earliest epoch on ties).

use std::f64::consts::PI;
use std::fmt::Write as _;

use ndarray::{Array2, ArrayView2};
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::data::{format_f64, iterations_per_epoch, Augmentation, Dataset, EpochSampler, Split};
use crate::error::{Error, Result};
use crate::losses::{
    bhp_loss, bwce_loss, combined_loss, curriculum_weights, scl_loss, ContrastiveInput,
    CurriculumState, LossOutput,
};
use crate::metrics::{self, MetricsReport};
use crate::network::{CeViews, NetworkParams, NetworkShape};
use crate::proxy::{allocate, ProxyBank};
use crate::scalar::Scalar;

/// Best epoch so far: epoch, validation accuracy, parameters and proxies.
type Snapshot<F> = (usize, f64, NetworkParams<F>, Option<ProxyBank<F>>);

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "lowercase")]
pub enum ContrastiveKind {
    /// Balanced hybrid-proxy loss with a proxy bank.
    #[default]
    Bhp,
    /// Supervised contrastive loss over samples only.
    Scl,
    /// No contrastive branch.
    None,
}

/// Layer sizes of the network; input width and class count come from the data.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct Layout {
    pub encoder_hidden: Vec<usize>,
    pub feature_dim: usize,
    pub proj_hidden: usize,
    pub embed_dim: usize,
}

impl Default for Layout {
    fn default() -> Self {
        let s = NetworkShape::with_defaults(1, 1);
        Self {
            encoder_hidden: s.encoder_hidden,
            feature_dim: s.feature_dim,
            proj_hidden: s.proj_hidden,
            embed_dim: s.embed_dim,
        }
    }
}

impl Layout {
    pub fn shape(&self, input_dim: usize, classes: usize) -> NetworkShape {
        NetworkShape {
            input_dim,
            encoder_hidden: self.encoder_hidden.clone(),
            feature_dim: self.feature_dim,
            proj_hidden: self.proj_hidden,
            embed_dim: self.embed_dim,
            classes,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub e1: usize,
    pub e2: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub weight_decay: f64,
    pub tau: f64,
    pub lambda: f64,
    pub mu: f64,
    /// Set by the caller; experiment files carry a single top-level seed.
    #[serde(skip)]
    pub seed: u64,
    pub layout: Layout,
    pub augmentation: Augmentation,
    pub ce_views: CeViews,
    pub contrastive: ContrastiveKind,
    /// Use the three-stage class weights; otherwise every class weighs 1.
    pub curriculum: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            e1: 12,
            e2: 30,
            batch_size: 64,
            lr0: 0.002,
            weight_decay: 1e-4,
            tau: 0.1,
            lambda: 1.0,
            mu: 2.0,
            seed: 0,
            layout: Layout::default(),
            augmentation: Augmentation::default(),
            ce_views: CeViews::View1,
            contrastive: ContrastiveKind::Bhp,
            curriculum: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0 < self.e1 && self.e1 < self.e2 && self.e2 < self.epochs) {
            return Err(Error::config(
                "e1/e2/epochs",
                format!(
                    "need 0 < e1 < e2 < epochs, got {} < {} < {}",
                    self.e1, self.e2, self.epochs
                ),
            ));
        }
        if self.batch_size < 2 {
            return Err(Error::config("batch_size", "must be at least 2"));
        }
        if !(self.lr0.is_finite() && self.lr0 >= 0.0) {
            return Err(Error::config("lr0", "must be finite and non-negative"));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::config(
                "weight_decay",
                "must be finite and non-negative",
            ));
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::config("tau", "must be positive"));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::config("lambda", "must be finite and non-negative"));
        }
        if !(self.mu.is_finite() && self.mu >= 0.0) {
            return Err(Error::config("mu", "must be finite and non-negative"));
        }
        let aug = self.augmentation;
        if !(aug.sigma1 >= 0.0
            && aug.sigma2 >= 0.0
            && aug.sigma1.is_finite()
            && aug.sigma2.is_finite())
        {
            return Err(Error::config(
                "augmentation",
                "sigmas must be finite and non-negative",
            ));
        }
        Ok(())
    }
}

/// Cosine-decayed learning rate for 0-based epoch index `epoch`.
pub fn lr_schedule(epoch: usize, config: &TrainConfig) -> f64 {
    config.lr0 * 0.5 * (1.0 + (PI * epoch as f64 / config.epochs as f64).cos())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based epoch number.
    pub epoch: usize,
    pub lr: f64,
    pub loss_total: f64,
    pub loss_bhp: f64,
    pub loss_bwce: f64,
    pub val: MetricsReport,
    /// Parameter steps taken this epoch.
    pub theta_updates: usize,
    /// Proxy cycle updates applied this epoch.
    pub proxy_updates: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_acc: f64,
}

pub const HISTORY_HEADER: &str =
    "epoch,lr,loss_total,loss_bhp,loss_bwce,val_acc,val_pre,val_sen,val_f1,val_auc";

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(HISTORY_HEADER);
        out.push('\n');
        for r in &self.records {
            let fields = [
                r.lr,
                r.loss_total,
                r.loss_bhp,
                r.loss_bwce,
                r.val.acc,
                r.val.pre,
                r.val.sen,
                r.val.f1,
                r.val.auc,
            ];
            let _ = write!(out, "{}", r.epoch);
            for f in fields {
                let _ = write!(out, ",{}", format_f64(f));
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<F> {
    /// Parameters from the best validation epoch.
    pub params: NetworkParams<F>,
    /// Proxy bank as of the best validation epoch.
    pub proxies: Option<ProxyBank<F>>,
    pub history: TrainHistory,
}

/// What the loop exposes to an observer after each parameter step.
pub struct IterationEvent<'a, F> {
    pub epoch: usize,
    pub iteration: usize,
    pub lr: f64,
    pub loss: &'a LossOutput<F>,
    pub params: &'a NetworkParams<F>,
    /// The proxies the loss was evaluated against.
    pub proxies: Option<ArrayView2<'a, F>>,
}

pub fn train<F: Scalar>(dataset: &Dataset<F>, config: &TrainConfig) -> Result<TrainOutcome<F>> {
    train_observed(dataset, config, |_| {})
}

pub fn train_observed<F: Scalar>(
    dataset: &Dataset<F>,
    config: &TrainConfig,
    mut observe: impl FnMut(&IterationEvent<F>),
) -> Result<TrainOutcome<F>> {
    config.validate()?;
    let classes = dataset.classes();
    let train_counts = dataset.class_counts();
    let train_size: usize = train_counts.iter().sum();
    let iterations = iterations_per_epoch(train_size, config.batch_size);
    if iterations == 0 {
        return Err(Error::config(
            "batch_size",
            format!("larger than the {train_size}-sample training split"),
        ));
    }
    let shape = config.layout.shape(dataset.input_dim(), classes);
    let mut params = NetworkParams::<F>::init(&shape, config.seed)?;
    let mut bank = match config.contrastive {
        ContrastiveKind::Bhp => Some(ProxyBank::<F>::init(
            &allocate(&train_counts)?,
            shape.embed_dim,
            config.seed,
        )?),
        _ => None,
    };
    let with_embeddings = config.contrastive != ContrastiveKind::None;
    let lambda = F::of(config.lambda);
    let mu = F::of(config.mu);
    let tau = F::of(config.tau);
    let decay = F::of(config.weight_decay);

    let mut records = Vec::with_capacity(config.epochs);
    let mut best: Option<Snapshot<F>> = None;
    let mut last_f1: Option<Vec<f64>> = None;

    for epoch_idx in 0..config.epochs {
        let epoch = epoch_idx + 1;
        let lr_f64 = lr_schedule(epoch_idx, config);
        let lr = F::of(lr_f64);
        let weights: Vec<F> = if config.curriculum {
            curriculum_weights(&CurriculumState {
                epoch,
                e1: config.e1,
                e2: config.e2,
                total: config.epochs,
                class_counts: &train_counts,
                val_f1: last_f1.as_deref(),
            })?
        } else {
            vec![F::one(); classes]
        };

        let mut sampler = EpochSampler::new(
            dataset,
            config.batch_size,
            config.augmentation,
            config.seed,
            epoch_idx as u64,
            true,
        )?;
        let (mut sum_total, mut sum_con, mut sum_ce) = (0.0, 0.0, 0.0);
        let mut steps = 0;
        while let Some(batch) = sampler.next_batch()? {
            let trace = params.forward(&batch, with_embeddings, config.ce_views)?;
            let ce_labels = trace.logit_labels(&batch.labels);
            let ce = bwce_loss(trace.logits.view(), &ce_labels, &weights)?;
            let contrastive = match (config.contrastive, trace.embeddings()) {
                (ContrastiveKind::None, _) | (_, None) => LossOutput::zero(),
                (kind, Some(z)) => {
                    let labels: Vec<usize> =
                        batch.labels.iter().chain(&batch.labels).copied().collect();
                    let input = ContrastiveInput::new(z.view(), &labels, classes, tau);
                    match (kind, &bank) {
                        (ContrastiveKind::Bhp, Some(b)) => bhp_loss(&input.with_bank(b))?,
                        _ => scl_loss(&input)?,
                    }
                }
            };
            let loss = combined_loss(&contrastive, &ce, lambda, mu)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    iteration: steps,
                    bhp: contrastive.value.as_f64(),
                    bwce: ce.value.as_f64(),
                });
            }
            let d_logits = loss.d_logits.as_ref().expect("classification gradient");
            let grads = params.backward(
                &trace,
                loss.d_embeddings.as_ref().map(|a| a.view()),
                d_logits.view(),
            )?;
            params.update_with(&grads, |p, g| *p -= lr * (g + decay * *p));

            observe(&IterationEvent {
                epoch,
                iteration: steps,
                lr: lr_f64,
                loss: &loss,
                params: &params,
                proxies: bank.as_ref().map(ProxyBank::vectors),
            });
            if let (Some(b), Some(dp)) = (bank.as_mut(), loss.d_proxies.as_ref()) {
                b.accumulate(dp.view(), lr)?;
            }
            sum_total += loss.value.as_f64();
            sum_con += contrastive.value.as_f64();
            sum_ce += ce.value.as_f64();
            steps += 1;
        }
        debug_assert_eq!(steps, iterations);
        let mut proxy_updates = 0;
        if let Some(b) = bank.as_mut() {
            b.cycle_update(steps)?;
            proxy_updates = 1;
        }

        let val = evaluate(&params, dataset, Split::Val)?;
        last_f1 = Some(val.per_class_f1());
        if best.as_ref().is_none_or(|(_, acc, _, _)| val.acc > *acc) {
            best = Some((epoch, val.acc, params.clone(), bank.clone()));
        }
        let t = steps as f64;
        records.push(EpochRecord {
            epoch,
            lr: lr_f64,
            loss_total: sum_total / t,
            loss_bhp: sum_con / t,
            loss_bwce: sum_ce / t,
            val,
            theta_updates: steps,
            proxy_updates,
        });
    }

    let (best_epoch, best_val_acc, params, proxies) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        params,
        proxies,
        history: TrainHistory {
            records,
            best_epoch,
            best_val_acc,
        },
    })
}

/// Metrics of the classifier on one split, from unaugmented features.
pub fn evaluate<F: Scalar>(
    params: &NetworkParams<F>,
    dataset: &Dataset<F>,
    split: Split,
) -> Result<MetricsReport> {
    let (x, y) = dataset.select(split);
    if y.is_empty() {
        return Err(Error::Invalid(format!("{} split is empty", split.as_str())));
    }
    evaluate_rows(params, x.view(), &y)
}

pub fn evaluate_rows<F: Scalar>(
    params: &NetworkParams<F>,
    x: ArrayView2<F>,
    labels: &[usize],
) -> Result<MetricsReport> {
    let logits = params.logits(x)?;
    let (predicted, probs) = predict(logits.view());
    metrics::report(labels, &predicted, probs.view())
}

/// Arg-max class (first on ties) and softmax probabilities per row.
pub fn predict<F: Scalar>(logits: ArrayView2<F>) -> (Vec<usize>, Array2<F>) {
    let mut probs = logits.to_owned();
    let mut predicted = Vec::with_capacity(logits.nrows());
    for mut row in probs.rows_mut() {
        let mut arg = 0;
        for (k, &v) in row.iter().enumerate() {
            if v > row[arg] {
                arg = k;
            }
        }
        predicted.push(arg);
        let m = row[arg];
        row.mapv_inplace(|v| (v - m).exp());
        let total = row.sum();
        row.mapv_inplace(|v| v / total);
    }
    (predicted, probs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn cosine_schedule_points() {
        let cfg = TrainConfig {
            epochs: 10,
            lr0: 0.4,
            ..TrainConfig::default()
        };
        assert_eq!(lr_schedule(0, &cfg), 0.4);
        assert!((lr_schedule(5, &cfg) - 0.2).abs() < 1e-15);
        let lrs: Vec<f64> = (0..10).map(|e| lr_schedule(e, &cfg)).collect();
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
        assert!(lrs[9] < 0.01);
    }

    #[test]
    fn config_bounds_are_checked() {
        let mut cfg = TrainConfig::default();
        cfg.validate().unwrap();
        cfg.e2 = cfg.e1;
        assert!(cfg.validate().is_err());
        let cfg = TrainConfig {
            batch_size: 1,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn predict_takes_first_maximum() {
        let (p, probs) = predict(array![[1.0f64, 3.0, 3.0], [0.0, 0.0, -1.0]].view());
        assert_eq!(p, vec![1, 0]);
        assert!((probs.row(0).sum() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn constant_classifier_scores_half_on_balanced_split() {
        use crate::network::NetworkShape;
        let shape = NetworkShape::with_defaults(2, 2);
        let mut p = NetworkParams::<f64>::zeros(&shape);
        p.classifier.bias[0] = 1.0;
        let x = array![[0.1, 0.2], [0.3, 0.4], [0.5, 0.6], [0.7, 0.8]];
        let r = evaluate_rows(&p, x.view(), &[0, 1, 0, 1]).unwrap();
        assert_eq!(r.acc, 0.5);
        assert_eq!(r.auc, 0.5);
    }
}
