//! The training loop against a hand-rolled plain cross-entropy loop, plus
//! structural properties of full runs.

use ecl_core::data::{generate, EpochSampler, SynthConfig};
use ecl_core::losses::ce_loss;
use ecl_core::network::{CeViews, NetworkParams};
use ecl_core::trainer::{lr_schedule, train, train_observed, ContrastiveKind, Layout, TrainConfig};
use ecl_core::{Dataset64, NetworkParams64};

fn dataset() -> Dataset64 {
    generate(&SynthConfig::new(3, 2, 120, 4.0, 7)).unwrap()
}

fn small_config() -> TrainConfig {
    TrainConfig {
        epochs: 6,
        e1: 2,
        e2: 4,
        batch_size: 16,
        lr0: 0.1,
        seed: 3,
        layout: Layout {
            encoder_hidden: vec![16, 16],
            feature_dim: 8,
            proj_hidden: 8,
            embed_dim: 4,
        },
        ..TrainConfig::default()
    }
}

fn final_params(ds: &Dataset64, cfg: &TrainConfig) -> NetworkParams64 {
    let mut last = None;
    train_observed(ds, cfg, |ev| last = Some(ev.params.clone())).unwrap();
    last.expect("at least one iteration")
}

#[test]
fn plain_cross_entropy_run_matches_hand_rolled_sgd_bitwise() {
    let ds = dataset();
    let cfg = TrainConfig {
        lambda: 0.0,
        mu: 1.0,
        contrastive: ContrastiveKind::None,
        curriculum: false,
        ..small_config()
    };
    let shape = cfg.layout.shape(ds.input_dim(), ds.classes());
    let mut params = NetworkParams::<f64>::init(&shape, cfg.seed).unwrap();
    for epoch in 0..cfg.epochs {
        let lr = lr_schedule(epoch, &cfg);
        let mut sampler = EpochSampler::new(
            &ds,
            cfg.batch_size,
            cfg.augmentation,
            cfg.seed,
            epoch as u64,
            true,
        )
        .unwrap();
        while let Some(batch) = sampler.next_batch().unwrap() {
            let trace = params.forward(&batch, false, CeViews::View1).unwrap();
            let loss = ce_loss(trace.logits.view(), &batch.labels).unwrap();
            let grads = params
                .backward(&trace, None, loss.d_logits.unwrap().view())
                .unwrap();
            params.update_with(&grads, |p, g| *p -= lr * (g + cfg.weight_decay * *p));
        }
    }
    assert_eq!(final_params(&ds, &cfg), params);
}

#[test]
fn zero_learning_rate_leaves_parameters_at_their_initial_values() {
    let ds = dataset();
    let cfg = TrainConfig {
        lr0: 0.0,
        ..small_config()
    };
    let init =
        NetworkParams::<f64>::init(&cfg.layout.shape(ds.input_dim(), ds.classes()), cfg.seed)
            .unwrap();
    let mut first_proxies = None;
    train_observed(&ds, &cfg, |ev| {
        assert_eq!(ev.params, &init);
        let p = ev.proxies.expect("hybrid proxies").to_owned();
        assert_eq!(first_proxies.get_or_insert_with(|| p.clone()), &p);
    })
    .unwrap();
}

#[test]
fn runs_are_deterministic() {
    let ds = dataset();
    let cfg = small_config();
    let a = train(&ds, &cfg).unwrap();
    let b = train(&ds, &cfg).unwrap();
    assert_eq!(a.history.to_csv(), b.history.to_csv());
    assert_eq!(a.params, b.params);
    assert_eq!(a.proxies, b.proxies);
}

#[test]
fn proxies_move_only_between_epochs() {
    let ds = dataset();
    let cfg = small_config();
    let mut seen: Vec<(usize, ndarray::Array2<f64>)> = Vec::new();
    train_observed(&ds, &cfg, |ev| {
        seen.push((ev.epoch, ev.proxies.unwrap().to_owned()))
    })
    .unwrap();
    for w in seen.windows(2) {
        let ((e0, p0), (e1, p1)) = (&w[0], &w[1]);
        if e0 == e1 {
            assert_eq!(p0, p1, "proxies changed inside epoch {e0}");
        } else {
            assert_ne!(
                p0, p1,
                "proxies did not change between epochs {e0} and {e1}"
            );
        }
    }
}

#[test]
fn epoch_losses_combine_linearly_and_best_epoch_is_the_first_maximum() {
    let ds = dataset();
    let cfg = TrainConfig {
        lambda: 0.7,
        mu: 1.9,
        ..small_config()
    };
    let out = train(&ds, &cfg).unwrap();
    let h = &out.history;
    assert_eq!(h.records.len(), cfg.epochs);
    for r in &h.records {
        let combined = cfg.lambda * r.loss_bhp + cfg.mu * r.loss_bwce;
        assert!((r.loss_total - combined).abs() < 1e-12 * combined.abs().max(1.0));
        assert_eq!(r.proxy_updates, 1);
        assert_eq!(
            r.theta_updates,
            ds.class_counts().iter().sum::<usize>() / cfg.batch_size
        );
    }
    let best = h
        .records
        .iter()
        .map(|r| r.val.acc)
        .fold(f64::NEG_INFINITY, f64::max);
    let first = h.records.iter().find(|r| r.val.acc == best).unwrap();
    assert_eq!(h.best_epoch, first.epoch);
    assert_eq!(h.best_val_acc, best);
}
