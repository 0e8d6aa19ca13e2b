//! Hybrid proxy bank: learnable class representatives, more of them for rarer
//! classes, updated once per epoch from gradients accumulated over the epoch.

use ndarray::{Array2, ArrayView2};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::network::MIN_NORM;
use crate::rng::{self, Purpose};
use crate::scalar::Scalar;

/// Proxy count per class from training class sizes: one proxy for the largest
/// class(es), `floor(N_max / (10 N_c)) + 2` for every other class.
pub fn allocate(class_counts: &[usize]) -> Result<Vec<usize>> {
    let n_max = *class_counts
        .iter()
        .max()
        .ok_or_else(|| Error::Invalid("cannot allocate proxies for an empty class list".into()))?;
    if let Some(c) = class_counts.iter().position(|&n| n == 0) {
        return Err(Error::Invalid(format!("class {c} has no training samples")));
    }
    Ok(class_counts
        .iter()
        .map(|&n| if n == n_max { 1 } else { n_max / (10 * n) + 2 })
        .collect())
}

/// Proxy vectors stored row-wise, grouped by class in ascending order.
#[derive(Clone, Debug, PartialEq)]
pub struct ProxyBank<F> {
    vectors: Array2<F>,
    labels: Vec<usize>,
    counts: Vec<usize>,
    /// Running `Σ_t lr_t * grad_t` for the current epoch.
    grad_accum: Array2<F>,
    iterations: usize,
}

impl<F: Scalar> ProxyBank<F> {
    /// Draws every proxy from a standard Gaussian and scales it to unit length.
    pub fn init(counts: &[usize], dim: usize, seed: u64) -> Result<Self> {
        if dim < 2 {
            return Err(Error::config(
                "embed_dim",
                "proxies need at least 2 dimensions",
            ));
        }
        let total: usize = counts.iter().sum();
        let mut rng = rng::stream(seed, Purpose::Proxy, 0);
        let mut vectors = Array2::zeros((total, dim));
        for mut row in vectors.rows_mut() {
            loop {
                let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm >= MIN_NORM {
                    for (dst, x) in row.iter_mut().zip(&v) {
                        *dst = F::of(x / norm);
                    }
                    break;
                }
            }
        }
        let labels = counts
            .iter()
            .enumerate()
            .flat_map(|(c, &n)| std::iter::repeat_n(c, n))
            .collect();
        Ok(Self {
            grad_accum: Array2::zeros((total, dim)),
            vectors,
            labels,
            counts: counts.to_vec(),
            iterations: 0,
        })
    }

    /// Rebuilds a bank from stored vectors (e.g. a checkpoint).
    pub fn from_vectors(counts: &[usize], vectors: Array2<F>) -> Result<Self> {
        let total: usize = counts.iter().sum();
        if vectors.nrows() != total {
            return Err(Error::Shape {
                context: "proxy vectors",
                expected: vec![total, vectors.ncols()],
                actual: vectors.shape().to_vec(),
            });
        }
        let labels = counts
            .iter()
            .enumerate()
            .flat_map(|(c, &n)| std::iter::repeat_n(c, n))
            .collect();
        Ok(Self {
            grad_accum: Array2::zeros(vectors.dim()),
            vectors,
            labels,
            counts: counts.to_vec(),
            iterations: 0,
        })
    }

    pub fn vectors(&self) -> ArrayView2<'_, F> {
        self.vectors.view()
    }

    /// Class of each proxy row.
    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    /// The proxies of one class.
    pub fn class_proxies(&self, class: usize) -> ArrayView2<'_, F> {
        let start: usize = self.counts[..class].iter().sum();
        self.vectors
            .slice(ndarray::s![start..start + self.counts[class], ..])
    }

    pub fn grad_accum(&self) -> ArrayView2<'_, F> {
        self.grad_accum.view()
    }

    /// Iterations accumulated since the last cycle update.
    pub fn iterations(&self) -> usize {
        self.iterations
    }

    /// Adds `lr * grads` to the accumulator. Proxies themselves do not move.
    pub fn accumulate(&mut self, grads: ArrayView2<F>, lr: F) -> Result<()> {
        if grads.dim() != self.vectors.dim() {
            return Err(Error::Shape {
                context: "proxy gradient",
                expected: self.vectors.shape().to_vec(),
                actual: grads.shape().to_vec(),
            });
        }
        if !(lr.is_finite() && lr >= F::zero()) {
            return Err(Error::config(
                "lr",
                "proxy learning rate must be finite and non-negative",
            ));
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteProxyGradient {
                iteration: self.iterations,
            });
        }
        for (acc, &g) in self.grad_accum.iter_mut().zip(grads.iter()) {
            *acc += lr * g;
        }
        self.iterations += 1;
        Ok(())
    }

    /// End-of-epoch update: `p <- normalize(p - accum)`, then clears the
    /// accumulator. `iterations_per_epoch` must equal the number of
    /// [`ProxyBank::accumulate`] calls since the previous update. An all-zero
    /// accumulator leaves the proxies bit-for-bit unchanged.
    pub fn cycle_update(&mut self, iterations_per_epoch: usize) -> Result<()> {
        if self.iterations != iterations_per_epoch {
            return Err(Error::MidEpochUpdate {
                done: self.iterations,
                expected: iterations_per_epoch,
            });
        }
        if self.grad_accum.iter().any(|&g| g != F::zero()) {
            let mut moved = &self.vectors - &self.grad_accum;
            for (r, mut row) in moved.rows_mut().into_iter().enumerate() {
                let norm = row.dot(&row).sqrt();
                if norm.as_f64() < MIN_NORM {
                    return Err(Error::ZeroNorm {
                        row: r,
                        norm: norm.as_f64(),
                    });
                }
                row.mapv_inplace(|v| v / norm);
            }
            self.vectors = moved;
        }
        self.grad_accum.fill(F::zero());
        self.iterations = 0;
        Ok(())
    }
}
