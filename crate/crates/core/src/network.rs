//! Shared MLP encoder with two heads.
//!
//! ```text
//!            ┌─> classifier (dense) ────────────────> logits   (view1, or both views)
//! x ─> encoder (dense+ReLU)*
//!            └─> proj hidden (dense+ReLU) ─> proj out ─> L2 row-normalize ─> Z
//! ```
//!
//! Weights are stored `in x out`, so a layer computes `x.dot(W) + b` on row batches.

use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::data::AugmentedBatch;
use crate::error::{Error, Result};
use crate::rng::{self, Purpose};
use crate::scalar::Scalar;

/// Per-layer activations, input side first.
type Layers<F> = Vec<Array2<F>>;

/// Normalization rejects rows whose pre-norm length is below this.
pub const MIN_NORM: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkShape {
    pub input_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub feature_dim: usize,
    pub proj_hidden: usize,
    pub embed_dim: usize,
    pub classes: usize,
}

impl NetworkShape {
    /// Default layer sizes for a given input dimension and class count.
    pub fn with_defaults(input_dim: usize, classes: usize) -> Self {
        Self {
            input_dim,
            encoder_hidden: vec![64, 64],
            feature_dim: 32,
            proj_hidden: 32,
            embed_dim: 16,
            classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("input_dim", self.input_dim),
            ("feature_dim", self.feature_dim),
            ("proj_hidden", self.proj_hidden),
            ("embed_dim", self.embed_dim),
            ("classes", self.classes),
        ];
        for (key, v) in dims {
            if v == 0 {
                return Err(Error::config(key, "must be positive"));
            }
        }
        if self.encoder_hidden.contains(&0) {
            return Err(Error::config(
                "encoder_hidden",
                "layer widths must be positive",
            ));
        }
        if self.embed_dim < 2 {
            return Err(Error::config("embed_dim", "must be at least 2"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "lowercase")]
pub enum CeViews {
    /// Classifier sees only the weakly augmented view.
    #[default]
    View1,
    Both,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dense<F> {
    pub weight: Array2<F>,
    pub bias: Array1<F>,
}

impl<F: Scalar> Dense<F> {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Array2::zeros((fan_in, fan_out)),
            bias: Array1::zeros(fan_out),
        }
    }

    /// Weights uniform in `±bound`, zero bias.
    fn uniform<R: Rng>(fan_in: usize, fan_out: usize, bound: f64, rng: &mut R) -> Self {
        let weight = Array2::from_shape_simple_fn((fan_in, fan_out), || {
            F::of(rng.random_range(-bound..=bound))
        });
        Self {
            weight,
            bias: Array1::zeros(fan_out),
        }
    }

    fn he_uniform<R: Rng>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        Self::uniform(fan_in, fan_out, (6.0 / fan_in as f64).sqrt(), rng)
    }

    fn lecun_uniform<R: Rng>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        Self::uniform(fan_in, fan_out, (1.0 / fan_in as f64).sqrt(), rng)
    }

    pub fn fan_in(&self) -> usize {
        self.weight.nrows()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.ncols()
    }

    pub fn forward(&self, x: &ArrayView2<F>) -> Array2<F> {
        let mut y = x.dot(&self.weight);
        y += &self.bias;
        y
    }

    /// Accumulates `dW = xᵀ dy`, `db = Σ_rows dy` into `grad` and returns `dx = dy Wᵀ`.
    pub fn backward(
        &self,
        x: &ArrayView2<F>,
        dy: &ArrayView2<F>,
        grad: &mut Dense<F>,
    ) -> Array2<F> {
        grad.weight += &x.t().dot(dy);
        grad.bias += &dy.sum_axis(Axis(0));
        dy.dot(&self.weight.t())
    }
}

/// Encoder, projection head and classifier parameters (`θ`). The same type
/// holds their gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams<F> {
    pub encoder: Vec<Dense<F>>,
    pub proj_hidden: Dense<F>,
    pub proj_out: Dense<F>,
    pub classifier: Dense<F>,
}

/// Everything the backward pass needs from a forward pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace<F> {
    batch_size: usize,
    ce_views: CeViews,
    /// Encoder input rows: view1 then (when encoded) view2.
    inputs: Array2<F>,
    /// Pre-activation of each encoder layer.
    encoder_pre: Vec<Array2<F>>,
    /// Post-ReLU output of each encoder layer; the last one is the feature matrix.
    encoder_out: Vec<Array2<F>>,
    head: Option<ProjectionTrace<F>>,
    pub logits: Array2<F>,
}

#[derive(Clone, Debug)]
struct ProjectionTrace<F> {
    hidden_pre: Array2<F>,
    hidden: Array2<F>,
    norms: Array1<F>,
    embeddings: Array2<F>,
}

impl<F: Scalar> ForwardTrace<F> {
    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn features(&self) -> &Array2<F> {
        self.encoder_out
            .last()
            .expect("encoder has at least one layer")
    }

    /// Row-normalized embeddings, `2B x d` (view1 rows first).
    pub fn embeddings(&self) -> Option<&Array2<F>> {
        self.head.as_ref().map(|h| &h.embeddings)
    }

    /// Sign pattern of every ReLU pre-activation. Finite-difference checks use
    /// it to detect a perturbation that crosses a kink.
    pub fn activation_pattern(&self) -> Vec<bool> {
        let head = self.head.iter().map(|h| &h.hidden_pre);
        self.encoder_pre
            .iter()
            .chain(head)
            .flat_map(|a| a.iter().map(|&v| v > F::zero()))
            .collect()
    }

    /// Class labels matching the logit rows.
    pub fn logit_labels(&self, labels: &[usize]) -> Vec<usize> {
        match self.ce_views {
            CeViews::View1 => labels.to_vec(),
            CeViews::Both => labels.iter().chain(labels).copied().collect(),
        }
    }
}

impl<F: Scalar> NetworkParams<F> {
    /// He-uniform initialization for the ReLU layers, `±1/sqrt(fan_in)` for the
    /// two linear output layers; all biases zero.
    pub fn init(shape: &NetworkShape, seed: u64) -> Result<Self> {
        shape.validate()?;
        let mut rng = rng::stream(seed, Purpose::Init, 0);
        let mut encoder = Vec::new();
        let mut fan_in = shape.input_dim;
        for &w in shape
            .encoder_hidden
            .iter()
            .chain(std::iter::once(&shape.feature_dim))
        {
            encoder.push(Dense::he_uniform(fan_in, w, &mut rng));
            fan_in = w;
        }
        let proj_hidden = Dense::he_uniform(shape.feature_dim, shape.proj_hidden, &mut rng);
        let proj_out = Dense::lecun_uniform(shape.proj_hidden, shape.embed_dim, &mut rng);
        let classifier = Dense::lecun_uniform(shape.feature_dim, shape.classes, &mut rng);
        Ok(Self {
            encoder,
            proj_hidden,
            proj_out,
            classifier,
        })
    }

    /// All-zero parameters of the given shape.
    pub fn zeros(shape: &NetworkShape) -> Self {
        let mut encoder = Vec::new();
        let mut fan_in = shape.input_dim;
        for &w in shape
            .encoder_hidden
            .iter()
            .chain(std::iter::once(&shape.feature_dim))
        {
            encoder.push(Dense::zeros(fan_in, w));
            fan_in = w;
        }
        Self {
            encoder,
            proj_hidden: Dense::zeros(shape.feature_dim, shape.proj_hidden),
            proj_out: Dense::zeros(shape.proj_hidden, shape.embed_dim),
            classifier: Dense::zeros(shape.feature_dim, shape.classes),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.shape())
    }

    pub fn shape(&self) -> NetworkShape {
        let (last, hidden) = self
            .encoder
            .split_last()
            .expect("encoder has at least one layer");
        NetworkShape {
            input_dim: self.encoder[0].fan_in(),
            encoder_hidden: hidden.iter().map(Dense::fan_out).collect(),
            feature_dim: last.fan_out(),
            proj_hidden: self.proj_hidden.fan_out(),
            embed_dim: self.proj_out.fan_out(),
            classes: self.classifier.fan_out(),
        }
    }

    /// Checks that layer shapes chain and all values are finite.
    pub fn validate(&self) -> Result<()> {
        if self.encoder.is_empty() {
            return Err(Error::Invalid("encoder has no layers".into()));
        }
        let mut prev = self.encoder[0].fan_in();
        for (i, layer) in self.encoder.iter().enumerate() {
            check_chain("encoder layer", prev, layer)?;
            if layer.bias.len() != layer.fan_out() {
                return Err(Error::Invalid(format!("encoder/{i}: bias length mismatch")));
            }
            prev = layer.fan_out();
        }
        check_chain("projection hidden", prev, &self.proj_hidden)?;
        check_chain(
            "projection output",
            self.proj_hidden.fan_out(),
            &self.proj_out,
        )?;
        check_chain("classifier", prev, &self.classifier)?;
        for (name, values, _) in self.tensors() {
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Invalid(format!(
                    "parameter {name} has non-finite entries"
                )));
            }
        }
        Ok(())
    }

    fn layers(&self) -> Vec<(String, &Dense<F>)> {
        let mut out: Vec<(String, &Dense<F>)> = self
            .encoder
            .iter()
            .enumerate()
            .map(|(i, l)| (format!("encoder/{i}"), l))
            .collect();
        out.push(("proj/hidden".into(), &self.proj_hidden));
        out.push(("proj/out".into(), &self.proj_out));
        out.push(("classifier".into(), &self.classifier));
        out
    }

    fn layers_mut(&mut self) -> Vec<&mut Dense<F>> {
        let mut out: Vec<&mut Dense<F>> = self.encoder.iter_mut().collect();
        out.push(&mut self.proj_hidden);
        out.push(&mut self.proj_out);
        out.push(&mut self.classifier);
        out
    }

    /// Named parameter tensors in a fixed order: `(name, values, shape)`.
    pub fn tensors(&self) -> Vec<(String, &[F], Vec<usize>)> {
        let mut out = Vec::new();
        for (name, layer) in self.layers() {
            out.push((
                format!("{name}/weight"),
                layer.weight.as_slice().expect("standard layout"),
                layer.weight.shape().to_vec(),
            ));
            out.push((
                format!("{name}/bias"),
                layer.bias.as_slice().expect("standard layout"),
                layer.bias.shape().to_vec(),
            ));
        }
        out
    }

    /// Mutable parameter tensors in the same order as [`NetworkParams::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut [F]> {
        let mut out = Vec::new();
        for layer in self.layers_mut() {
            out.push(layer.weight.as_slice_mut().expect("standard layout"));
            out.push(layer.bias.as_slice_mut().expect("standard layout"));
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, v, _)| v.len()).sum()
    }

    /// Applies `f(param, grad)` elementwise over matching tensors.
    pub fn update_with(&mut self, grads: &Self, mut f: impl FnMut(&mut F, F)) {
        let g = grads.tensors();
        for (p, (_, gv, _)) in self.tensors_mut().into_iter().zip(g) {
            for (x, &d) in p.iter_mut().zip(gv) {
                f(x, d);
            }
        }
    }

    /// Weighted sum `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Self, scale: F) {
        self.update_with(other, |x, d| *x += scale * d);
    }

    fn encode(&self, x: ArrayView2<F>) -> Result<(Layers<F>, Layers<F>)> {
        let mut pre = Vec::with_capacity(self.encoder.len());
        let mut out: Vec<Array2<F>> = Vec::with_capacity(self.encoder.len());
        for (i, layer) in self.encoder.iter().enumerate() {
            let input = out.last().map_or(x, |a| a.view());
            let z = layer.forward(&input);
            ensure_finite(&z, || format!("encoder layer {i}"))?;
            out.push(relu(&z));
            pre.push(z);
        }
        Ok((pre, out))
    }

    /// Classifier logits for raw feature rows, without keeping a trace.
    pub fn logits(&self, x: ArrayView2<F>) -> Result<Array2<F>> {
        self.check_input(x.ncols())?;
        let (_, out) = self.encode(x)?;
        let logits = self
            .classifier
            .forward(&out.last().expect("non-empty encoder").view());
        ensure_finite(&logits, || "classifier".into())?;
        Ok(logits)
    }

    fn check_input(&self, k: usize) -> Result<()> {
        let want = self.encoder[0].fan_in();
        if k != want {
            return Err(Error::Shape {
                context: "network input",
                expected: vec![want],
                actual: vec![k],
            });
        }
        Ok(())
    }

    /// Runs both views through the shared encoder. When `embeddings` is false
    /// and only view1 feeds the classifier, view2 is not encoded at all.
    pub fn forward(
        &self,
        batch: &AugmentedBatch<F>,
        embeddings: bool,
        ce_views: CeViews,
    ) -> Result<ForwardTrace<F>> {
        let b = batch.len();
        self.check_input(batch.view1.ncols())?;
        if batch.view2.dim() != batch.view1.dim() || batch.view1.nrows() != b {
            return Err(Error::Shape {
                context: "augmented batch",
                expected: vec![b, batch.view1.ncols()],
                actual: vec![batch.view2.nrows(), batch.view2.ncols()],
            });
        }
        let both = embeddings || ce_views == CeViews::Both;
        let inputs = if both {
            ndarray::concatenate(Axis(0), &[batch.view1.view(), batch.view2.view()])
                .expect("views share width")
        } else {
            batch.view1.clone()
        };
        let (encoder_pre, encoder_out) = self.encode(inputs.view())?;
        let features = encoder_out.last().expect("non-empty encoder");
        let logit_rows = match ce_views {
            CeViews::View1 => b,
            CeViews::Both => 2 * b,
        };
        let logits = self
            .classifier
            .forward(&features.slice(s![..logit_rows, ..]));
        ensure_finite(&logits, || "classifier".into())?;

        let head = if embeddings {
            let hidden_pre = self.proj_hidden.forward(&features.view());
            ensure_finite(&hidden_pre, || "projection hidden".into())?;
            let hidden = relu(&hidden_pre);
            let mut u = self.proj_out.forward(&hidden.view());
            ensure_finite(&u, || "projection output".into())?;
            let mut norms = Array1::zeros(u.nrows());
            for (r, mut row) in u.rows_mut().into_iter().enumerate() {
                let norm = row.dot(&row).sqrt();
                if norm.as_f64() < MIN_NORM {
                    return Err(Error::ZeroNorm {
                        row: r,
                        norm: norm.as_f64(),
                    });
                }
                row.mapv_inplace(|v| v / norm);
                norms[r] = norm;
            }
            Some(ProjectionTrace {
                hidden_pre,
                hidden,
                norms,
                embeddings: u,
            })
        } else {
            None
        };

        Ok(ForwardTrace {
            batch_size: b,
            ce_views,
            inputs,
            encoder_pre,
            encoder_out,
            head,
            logits,
        })
    }

    /// Gradients of a scalar loss with respect to every parameter, given the
    /// loss cotangents of the embeddings (`2B x d`) and the logits.
    pub fn backward(
        &self,
        trace: &ForwardTrace<F>,
        d_embeddings: Option<ArrayView2<F>>,
        d_logits: ArrayView2<F>,
    ) -> Result<Self> {
        if d_logits.dim() != trace.logits.dim() {
            return Err(Error::Shape {
                context: "logit cotangent",
                expected: trace.logits.shape().to_vec(),
                actual: d_logits.shape().to_vec(),
            });
        }
        let mut grads = self.zeros_like();
        let features = trace.features();
        let mut d_features = Array2::<F>::zeros(features.dim());

        let rows = trace.logits.nrows();
        let d_feat_cls = self.classifier.backward(
            &features.slice(s![..rows, ..]),
            &d_logits,
            &mut grads.classifier,
        );
        d_features.slice_mut(s![..rows, ..]).assign(&d_feat_cls);

        if let Some(dz) = d_embeddings {
            let head = trace.head.as_ref().ok_or(Error::Shape {
                context: "embedding cotangent without embeddings",
                expected: vec![0],
                actual: dz.shape().to_vec(),
            })?;
            if dz.dim() != head.embeddings.dim() {
                return Err(Error::Shape {
                    context: "embedding cotangent",
                    expected: head.embeddings.shape().to_vec(),
                    actual: dz.shape().to_vec(),
                });
            }
            // through z = u / |u|: du = (dz - z (z·dz)) / |u|
            let mut du = dz.to_owned();
            for (r, mut row) in du.rows_mut().into_iter().enumerate() {
                let z = head.embeddings.row(r);
                let proj = z.dot(&row);
                let norm = head.norms[r];
                Zip::from(&mut row)
                    .and(&z)
                    .for_each(|g, &zi| *g = (*g - zi * proj) / norm);
            }
            let d_hidden =
                self.proj_out
                    .backward(&head.hidden.view(), &du.view(), &mut grads.proj_out);
            let d_hidden_pre = relu_backward(&head.hidden_pre, d_hidden);
            let d_feat_proj = self.proj_hidden.backward(
                &features.view(),
                &d_hidden_pre.view(),
                &mut grads.proj_hidden,
            );
            d_features += &d_feat_proj;
        }

        let mut d_out = d_features;
        for i in (0..self.encoder.len()).rev() {
            let d_pre = relu_backward(&trace.encoder_pre[i], d_out);
            let input = if i == 0 {
                trace.inputs.view()
            } else {
                trace.encoder_out[i - 1].view()
            };
            d_out = self.encoder[i].backward(&input, &d_pre.view(), &mut grads.encoder[i]);
        }
        Ok(grads)
    }
}

fn check_chain<F: Scalar>(what: &str, fan_in: usize, layer: &Dense<F>) -> Result<()> {
    if layer.fan_in() != fan_in || layer.bias.len() != layer.fan_out() {
        return Err(Error::Invalid(format!(
            "{what}: expected input width {fan_in}, got {}x{} with bias {}",
            layer.fan_in(),
            layer.fan_out(),
            layer.bias.len()
        )));
    }
    Ok(())
}

fn ensure_finite<F: Scalar>(a: &Array2<F>, layer: impl FnOnce() -> String) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteActivation { layer: layer() })
    }
}

fn relu<F: Scalar>(a: &Array2<F>) -> Array2<F> {
    a.mapv(|v| if v > F::zero() { v } else { F::zero() })
}

fn relu_backward<F: Scalar>(pre: &Array2<F>, mut grad: Array2<F>) -> Array2<F> {
    Zip::from(&mut grad).and(pre).for_each(|g, &p| {
        if p <= F::zero() {
            *g = F::zero();
        }
    });
    grad
}
