//! The contrastive losses against a direct double-sum transcription of their
//! definitions, with no max-shift and no shared code with the library.

use ecl_core::losses::{bhp_loss, bhp_loss_detailed, scl_loss, ContrastiveInput};
use ndarray::{array, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// `points` are the rows of S; returns the mean anchor loss.
fn oracle(points: &[Vec<f64>], labels: &[usize], tau: f64, balanced: bool) -> f64 {
    let n = points.len();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let size = |c: usize| labels.iter().filter(|&&l| l == c).count();
    let mut total = 0.0;
    let mut anchors = 0;
    for i in 0..n {
        let positives: Vec<usize> = (0..n)
            .filter(|&j| j != i && labels[j] == labels[i])
            .collect();
        if positives.is_empty() {
            continue;
        }
        anchors += 1;
        let pos_mean = positives
            .iter()
            .map(|&j| dot(&points[i], &points[j]) / tau)
            .sum::<f64>()
            / positives.len() as f64;
        let mut e = 0.0;
        for k in (0..n).filter(|&k| k != i) {
            let w = if balanced {
                let own = usize::from(labels[k] == labels[i]);
                1.0 / ((size(labels[k]) - own).max(1) as f64)
            } else {
                1.0
            };
            e += w * (dot(&points[i], &points[k]) / tau).exp();
        }
        total += pos_mean - e.ln();
    }
    -total / anchors as f64
}

fn unit_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Array2<f64> {
    let mut a = Array2::from_shape_simple_fn((n, d), || rng.sample::<f64, _>(StandardNormal));
    for mut row in a.rows_mut() {
        let norm = row.dot(&row).sqrt();
        row.mapv_inplace(|v| v / norm);
    }
    a
}

fn rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

struct Case {
    z: Array2<f64>,
    labels: Vec<usize>,
    proxies: Array2<f64>,
    proxy_labels: Vec<usize>,
    classes: usize,
    tau: f64,
}

fn random_case(seed: u64, with_proxies: bool) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classes = rng.random_range(2..=4);
    let b = rng.random_range(2..=8);
    let d = rng.random_range(2..=4);
    let tau = [0.1, 0.5, 1.0][rng.random_range(0..3)];
    let base: Vec<usize> = (0..b).map(|_| rng.random_range(0..classes)).collect();
    let labels = base.iter().chain(&base).copied().collect();
    let z = unit_rows(&mut rng, 2 * b, d);
    let proxy_labels: Vec<usize> = if with_proxies {
        (0..classes)
            .flat_map(|c| std::iter::repeat_n(c, rng.random_range(1..=4)))
            .collect()
    } else {
        Vec::new()
    };
    let proxies = unit_rows(&mut rng, proxy_labels.len(), d);
    Case {
        z,
        labels,
        proxies,
        proxy_labels,
        classes,
        tau,
    }
}

#[test]
fn balanced_hybrid_loss_matches_direct_summation_on_random_batches() {
    for seed in 0..50 {
        let c = random_case(seed, true);
        let input = ContrastiveInput::new(c.z.view(), &c.labels, c.classes, c.tau)
            .with_proxies(c.proxies.view(), &c.proxy_labels);
        let got = bhp_loss(&input).unwrap().value;
        let mut points = rows(&c.z);
        points.extend(rows(&c.proxies));
        let labels: Vec<usize> = c.labels.iter().chain(&c.proxy_labels).copied().collect();
        let want = oracle(&points, &labels, c.tau, true);
        assert!(
            (got - want).abs() <= 1e-12 * want.abs().max(1.0),
            "seed {seed}: {got} vs {want}"
        );
    }
}

#[test]
fn without_proxies_the_balanced_loss_matches_its_oracle() {
    for seed in 100..150 {
        let c = random_case(seed, false);
        let input = ContrastiveInput::new(c.z.view(), &c.labels, c.classes, c.tau);
        let got = bhp_loss(&input).unwrap().value;
        let want = oracle(&rows(&c.z), &c.labels, c.tau, true);
        assert!(
            (got - want).abs() <= 1e-12 * want.abs().max(1.0),
            "seed {seed}: {got} vs {want}"
        );
    }
}

#[test]
fn supervised_contrastive_loss_matches_its_oracle() {
    for seed in 200..250 {
        let c = random_case(seed, false);
        let input = ContrastiveInput::new(c.z.view(), &c.labels, c.classes, c.tau);
        let got = scl_loss(&input).unwrap().value;
        let want = oracle(&rows(&c.z), &c.labels, c.tau, false);
        assert!(
            (got - want).abs() <= 1e-12 * want.abs().max(1.0),
            "seed {seed}: {got} vs {want}"
        );
    }
}

/// Two samples of different classes, two views each, orthogonal embeddings,
/// tau = 1/2. Every anchor has one positive at similarity 2 and a partition
/// sum of 1/2 + e^2 + 1/2, so the loss is ln(1 + e^2) - 2. Adding a class-0
/// proxy equal to the class-0 embedding rebalances the weights to the same value.
#[test]
fn worked_two_sample_example() {
    let z = array![[1.0, 0.0], [0.0, 1.0], [1.0, 0.0], [0.0, 1.0]];
    let labels = [0, 1, 0, 1];
    let expected = (1.0 + 2f64.exp()).ln() - 2.0;
    let out = bhp_loss(&ContrastiveInput::new(z.view(), &labels, 2, 0.5)).unwrap();
    assert!((out.value - expected).abs() < 1e-15, "{}", out.value);

    let p = array![[1.0, 0.0]];
    let input = ContrastiveInput::new(z.view(), &labels, 2, 0.5).with_proxies(p.view(), &[0]);
    let (out, stats) = bhp_loss_detailed(&input).unwrap();
    assert!((out.value - expected).abs() < 1e-15, "{}", out.value);
    assert_eq!(stats.anchors, 5);
    assert_eq!(stats.class_sizes, vec![3, 2]);
}

proptest! {
    #[test]
    fn loss_is_invariant_to_row_order(seed in 0u64..10_000, shift in 1usize..40) {
        let c = random_case(seed, true);
        let n = c.z.nrows();
        let perm: Vec<usize> = (0..n).map(|i| (i * 7 + shift) % n).collect();
        prop_assume!({ let mut s = perm.clone(); s.sort(); s.dedup(); s.len() == n });
        let z2 = c.z.select(ndarray::Axis(0), &perm);
        let l2: Vec<usize> = perm.iter().map(|&i| c.labels[i]).collect();
        let a = bhp_loss(&ContrastiveInput::new(c.z.view(), &c.labels, c.classes, c.tau)
            .with_proxies(c.proxies.view(), &c.proxy_labels)).unwrap();
        let b = bhp_loss(&ContrastiveInput::new(z2.view(), &l2, c.classes, c.tau)
            .with_proxies(c.proxies.view(), &c.proxy_labels)).unwrap();
        prop_assert_eq!(a.value.to_bits(), b.value.to_bits());
        // gradients follow their rows
        let ga = a.d_embeddings.unwrap().select(ndarray::Axis(0), &perm);
        let gb = b.d_embeddings.unwrap();
        for (x, y) in ga.iter().zip(gb.iter()) {
            prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
        }
    }

    #[test]
    fn loss_is_equivariant_under_class_relabeling(seed in 0u64..10_000, rot in 1usize..5) {
        let c = random_case(seed, true);
        let relabel = |l: &[usize]| -> Vec<usize> { l.iter().map(|&x| (x + rot) % c.classes).collect() };
        let (l2, p2) = (relabel(&c.labels), relabel(&c.proxy_labels));
        let a = bhp_loss(&ContrastiveInput::new(c.z.view(), &c.labels, c.classes, c.tau)
            .with_proxies(c.proxies.view(), &c.proxy_labels)).unwrap();
        let b = bhp_loss(&ContrastiveInput::new(c.z.view(), &l2, c.classes, c.tau)
            .with_proxies(c.proxies.view(), &p2)).unwrap();
        prop_assert_eq!(a.value.to_bits(), b.value.to_bits());
        prop_assert_eq!(a.d_embeddings, b.d_embeddings);
        prop_assert_eq!(a.d_proxies, b.d_proxies);
    }
}
