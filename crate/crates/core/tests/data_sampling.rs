//! Synthetic data generation, splitting and mini-batch sampling.

use ecl_core::data::{generate, split_sizes, Augmentation, EpochSampler, Split, SynthConfig};
use ecl_core::proxy::allocate;
use ecl_core::Dataset64;
use proptest::prelude::*;

fn config(classes: usize, n_max: usize, alpha: f64, seed: u64) -> SynthConfig {
    SynthConfig::new(classes, 2, n_max, alpha, seed)
}

#[test]
fn class_totals_follow_the_power_law_and_splits_are_stratified() {
    let cfg = config(5, 1000, 50.0, 3);
    let want: Vec<usize> = (0..5)
        .map(|c| (1000.0 * 50f64.powf(-(c as f64) / 4.0)).round() as usize)
        .collect();
    assert_eq!(cfg.class_totals().unwrap(), want);
    assert_eq!(want, vec![1000, 376, 141, 53, 20]);

    let ds: Dataset64 = generate(&cfg).unwrap();
    assert_eq!(ds.class_totals(), want);
    for (c, &n) in want.iter().enumerate() {
        let (train, val, test) = split_sizes(n);
        assert_eq!((val, test), (n / 5, n / 5));
        assert_eq!(train, n - 2 * (n / 5));
        assert_eq!(ds.counts_in(Some(Split::Train))[c], train);
        assert_eq!(ds.counts_in(Some(Split::Val))[c], val);
        assert_eq!(ds.counts_in(Some(Split::Test))[c], test);
    }
}

#[test]
fn csv_round_trip_preserves_every_bit() {
    let ds: Dataset64 = generate(&config(3, 60, 4.0, 9)).unwrap();
    let mut buf = Vec::new();
    ds.write_csv(&mut buf).unwrap();
    let back = Dataset64::read_csv(buf.as_slice(), Some(3)).unwrap();
    assert_eq!(back.labels(), ds.labels());
    assert_eq!(back.splits(), ds.splits());
    for (a, b) in back.features().iter().zip(ds.features()) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
}

/// Every batch is a draw of `B` rows without replacement from the training
/// split, so the count of class `c` in a batch is hypergeometric with mean
/// `B K/N` and variance `B (K/N) (1 - K/N) (N - B)/(N - 1)`. The first batch of
/// 10000 independently shuffled epochs is compared against both moments.
#[test]
fn batch_class_counts_are_hypergeometric() {
    let ds: Dataset64 = generate(&config(5, 1000, 50.0, 1)).unwrap();
    let counts = ds.class_counts();
    let n: usize = counts.iter().sum();
    let b = 64;
    let trials = 10_000;
    let mut sum = vec![0.0f64; counts.len()];
    let mut sum_sq = vec![0.0f64; counts.len()];
    for epoch in 0..trials {
        let mut sampler = EpochSampler::new(&ds, b, Augmentation::NONE, 11, epoch, true).unwrap();
        let batch = sampler.next_batch().unwrap().unwrap();
        let mut k = vec![0.0f64; counts.len()];
        for &l in &batch.labels {
            k[l] += 1.0;
        }
        for c in 0..counts.len() {
            sum[c] += k[c];
            sum_sq[c] += k[c] * k[c];
        }
    }
    let t = trials as f64;
    for (c, &kc) in counts.iter().enumerate() {
        let p = kc as f64 / n as f64;
        let mean = b as f64 * p;
        let var = b as f64 * p * (1.0 - p) * (n - b) as f64 / (n - 1) as f64;
        let got_mean = sum[c] / t;
        let got_var = sum_sq[c] / t - got_mean * got_mean;
        // five standard errors of the sample mean
        assert!(
            (got_mean - mean).abs() < 5.0 * (var / t).sqrt(),
            "class {c}: mean {got_mean} vs {mean}"
        );
        assert!(
            (got_var / var - 1.0).abs() < 0.1,
            "class {c}: variance {got_var} vs {var}"
        );
    }
}

#[test]
fn an_epoch_visits_each_training_row_at_most_once() {
    let ds: Dataset64 = generate(&config(3, 100, 5.0, 2)).unwrap();
    let mut sampler = EpochSampler::new(&ds, 16, Augmentation::default(), 4, 0, true).unwrap();
    let mut seen = Vec::new();
    while let Some(batch) = sampler.next_batch().unwrap() {
        assert_eq!(batch.len(), 16);
        for (&i, &l) in batch.indices.iter().zip(&batch.labels) {
            assert_eq!(ds.splits()[i], Split::Train);
            assert_eq!(ds.labels()[i], l);
        }
        seen.extend(batch.indices);
    }
    let train = ds.indices(Split::Train).len();
    assert_eq!(seen.len(), train / 16 * 16);
    seen.sort();
    seen.dedup();
    assert_eq!(seen.len(), train / 16 * 16);
}

proptest! {
    #[test]
    fn class_totals_decrease_with_class_index(classes in 2usize..8, n_max in 50usize..2000, alpha in 1.0f64..10.0) {
        let cfg = config(classes, n_max, alpha, 0);
        if let Ok(totals) = cfg.class_totals() {
            prop_assert_eq!(totals[0], n_max);
            prop_assert!(totals.windows(2).all(|w| w[0] >= w[1]));
            prop_assert!(totals.iter().all(|&n| n >= 5));
        }
    }

}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn proxy_allocation_reverses_the_imbalance(mut counts in prop::collection::vec(1usize..2000, 2..8)) {
        counts.sort_unstable_by(|a, b| b.cmp(a));
        let alloc = allocate(&counts).unwrap();
        let n_max = counts[0];
        prop_assert!(alloc.windows(2).all(|w| w[0] <= w[1]));
        for (&n, &k) in counts.iter().zip(&alloc) {
            let ok = if n == n_max { k == 1 } else { k >= 2 };
            prop_assert!(ok);
        }
        if n_max >= 10 * counts[counts.len() - 1] {
            prop_assert!(alloc[alloc.len() - 1] >= 3);
        }
    }
}
