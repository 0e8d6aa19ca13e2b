//! Metrics against brute-force definitions: counting for the confusion-based
//! scores and all positive/negative pairs for AUC.

use ecl_core::metrics::report;
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Oracle {
    acc: f64,
    pre: f64,
    sen: f64,
    f1: f64,
    auc: f64,
}

fn oracle(t: &[usize], p: &[usize], scores: &Array2<f64>) -> Oracle {
    let c = scores.ncols();
    let n = t.len();
    let safe = |a: f64, b: f64| if b == 0.0 { 0.0 } else { a / b };
    let (mut pre, mut sen, mut f1, mut auc) = (0.0, 0.0, 0.0, 0.0);
    for k in 0..c {
        let tp = (0..n).filter(|&i| t[i] == k && p[i] == k).count() as f64;
        let fp = (0..n).filter(|&i| t[i] != k && p[i] == k).count() as f64;
        let fn_ = (0..n).filter(|&i| t[i] == k && p[i] != k).count() as f64;
        let pk = safe(tp, tp + fp);
        let rk = safe(tp, tp + fn_);
        pre += pk;
        sen += rk;
        f1 += safe(2.0 * pk * rk, pk + rk);
        let (mut wins, mut pairs) = (0.0, 0.0);
        for i in (0..n).filter(|&i| t[i] == k) {
            for j in (0..n).filter(|&j| t[j] != k) {
                pairs += 1.0;
                let (a, b) = (scores[[i, k]], scores[[j, k]]);
                wins += if a > b {
                    1.0
                } else if a == b {
                    0.5
                } else {
                    0.0
                };
            }
        }
        auc += wins / pairs;
    }
    let c = c as f64;
    Oracle {
        acc: (0..n).filter(|&i| t[i] == p[i]).count() as f64 / n as f64,
        pre: pre / c,
        sen: sen / c,
        f1: f1 / c,
        auc: auc / c,
    }
}

/// Random labels covering every class, predictions and scores. Scores are
/// rounded to one decimal so ties are common.
fn random_case(seed: u64) -> (Vec<usize>, Vec<usize>, Array2<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = rng.random_range(2..=8);
    let n = rng.random_range(10..=200);
    let mut t: Vec<usize> = (0..n)
        .map(|i| if i < c { i } else { rng.random_range(0..c) })
        .collect();
    t.reverse();
    let p = (0..n)
        .map(|i| {
            if rng.random_bool(0.6) {
                t[i]
            } else {
                rng.random_range(0..c)
            }
        })
        .collect();
    let scores =
        Array2::from_shape_simple_fn((n, c), || (rng.random::<f64>() * 10.0).round() / 10.0);
    (t, p, scores)
}

#[test]
fn report_matches_brute_force_on_random_cases() {
    for seed in 0..100 {
        let (t, p, s) = random_case(seed);
        let r = report(&t, &p, s.view()).unwrap();
        let o = oracle(&t, &p, &s);
        for (name, got, want) in [
            ("acc", r.acc, o.acc),
            ("pre", r.pre, o.pre),
            ("sen", r.sen, o.sen),
            ("f1", r.f1, o.f1),
            ("auc", r.auc, o.auc),
        ] {
            assert!(
                (got - want).abs() < 1e-12,
                "seed {seed} {name}: {got} vs {want}"
            );
        }
        let total: usize = r.confusion.iter().flatten().sum();
        assert_eq!(total, t.len());
        for (i, row) in r.confusion_normalized.iter().enumerate() {
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-12, "row {i} sums to {s}");
        }
    }
}

proptest! {
    #[test]
    fn metrics_ignore_sample_order(seed in 0u64..10_000, shift in 1usize..100) {
        let (t, p, s) = random_case(seed);
        let n = t.len();
        let perm: Vec<usize> = (0..n).map(|i| (i + shift) % n).collect();
        let t2: Vec<usize> = perm.iter().map(|&i| t[i]).collect();
        let p2: Vec<usize> = perm.iter().map(|&i| p[i]).collect();
        let s2 = s.select(ndarray::Axis(0), &perm);
        let a = report(&t, &p, s.view()).unwrap();
        let b = report(&t2, &p2, s2.view()).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn relabeling_classes_permutes_per_class_scores(seed in 0u64..10_000, rot in 1usize..8) {
        let (t, p, s) = random_case(seed);
        let c = s.ncols();
        let map = |l: usize| (l + rot) % c;
        let t2: Vec<usize> = t.iter().map(|&l| map(l)).collect();
        let p2: Vec<usize> = p.iter().map(|&l| map(l)).collect();
        let mut s2 = s.clone();
        for k in 0..c {
            s2.column_mut(map(k)).assign(&s.column(k));
        }
        let a = report(&t, &p, s.view()).unwrap();
        let b = report(&t2, &p2, s2.view()).unwrap();
        for k in 0..c {
            prop_assert_eq!(&a.per_class[k], &b.per_class[map(k)]);
        }
        for (x, y) in [(a.pre, b.pre), (a.sen, b.sen), (a.f1, b.f1), (a.auc, b.auc)] {
            prop_assert!((x - y).abs() < 1e-12);
        }
        prop_assert_eq!(a.acc, b.acc);
    }

    #[test]
    fn auc_is_invariant_to_monotone_score_transforms(seed in 0u64..10_000) {
        let (t, p, s) = random_case(seed);
        let warped = s.mapv(|v| (3.0 * v).exp() - 7.0);
        let a = report(&t, &p, s.view()).unwrap();
        let b = report(&t, &p, warped.view()).unwrap();
        prop_assert_eq!(a.auc, b.auc);
        prop_assert_eq!(a.per_class, b.per_class);
    }
}
