//! Prototype-based contrastive semantic space.
//!
//! A small backbone (two conv stages with global pooling for images, or a two-layer
//! perceptron) feeds a two-layer projector whose L2-normalized output lives on the
//! unit sphere together with one learnable unit-norm prototype per class. The
//! supervised contrastive loss pulls each embedding toward its class members and
//! prototype:
//!
//! ```text
//! loss(i) = -(1/|P_i|) * sum_{p in P_i} log( exp(zi.zp / tau) / denom(i) )
//! denom(i) = sum over classes l of (1/|A_l|) * sum_{j in A_l} exp(zi.zj / tau)
//! ```
//!
//! where `A_l` is the batch members of class `l` plus prototype `l`, and `P_i` is
//! `A_{y_i}` without the anchor itself. The denominator averages within each class
//! before summing, so head classes cannot drown out tail classes by population.
//!
//! All gradients are computed analytically; the test suite checks every parameter
//! tensor against central finite differences.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::nn::{
    avg_pool2_backward, avg_pool2_forward, global_avg_pool_backward, global_avg_pool_forward,
    normalize_rows, normalize_rows_backward, relu_backward, relu_forward, Conv3x3, Linear,
};

const CHECKPOINT_MAGIC: &[u8; 5] = b"CCMX1";

// ── Configuration ─────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneKind {
    /// Two 3x3 conv stages (each conv + ReLU), a 2x2 average pool between them,
    /// global average pooling on top. For image-shaped inputs.
    Conv,
    /// Two-layer perceptron on flattened pixels. For vector-shaped inputs.
    Mlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub num_classes: usize,
    pub backbone: BackboneKind,
    pub conv1_channels: usize,
    pub conv2_channels: usize,
    pub mlp_hidden: usize,
    pub proj_hidden: usize,
    pub proj_dim: usize,
    pub temperature: f64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("width", self.width),
            ("height", self.height),
            ("channels", self.channels),
            ("num_classes", self.num_classes),
            ("conv1_channels", self.conv1_channels),
            ("conv2_channels", self.conv2_channels),
            ("mlp_hidden", self.mlp_hidden),
            ("proj_hidden", self.proj_hidden),
            ("proj_dim", self.proj_dim),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if !self.temperature.is_finite() || self.temperature <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "temperature must be a finite value > 0, got {}",
                self.temperature
            )));
        }
        Ok(())
    }

    pub fn feat_dim(&self) -> usize {
        match self.backbone {
            BackboneKind::Conv => self.conv2_channels,
            BackboneKind::Mlp => self.mlp_hidden,
        }
    }
}

// ── Model ─────────────────────────────────────────────────────────────────

#[derive(Debug, Clone)]
enum Backbone {
    Conv { conv1: Conv3x3, conv2: Conv3x3 },
    Mlp { fc1: Linear, fc2: Linear },
}

/// Backbone + projector + learnable prototypes. Prototype rows are unit-norm by
/// construction and re-normalized after every optimizer step; the projector has no
/// batch statistics, so a sample's embedding never depends on its batch neighbors.
#[derive(Debug, Clone)]
pub struct SemanticModel {
    config: ModelConfig,
    backbone: Backbone,
    proj1: Linear,
    proj2: Linear,
    /// `num_classes x proj_dim`, rows unit-norm.
    prototypes: Vec<f64>,
}

/// Saved activations from a backbone pass, consumed by the backward pass.
pub struct FeatCache {
    n: usize,
    detail: FeatCacheDetail,
    pub feats: Vec<f64>,
}

enum FeatCacheDetail {
    Conv {
        input: Vec<f64>,
        conv1_pre: Vec<f64>,
        pooled: Vec<f64>,
        pooled_h: usize,
        pooled_w: usize,
        conv2_pre: Vec<f64>,
    },
    Mlp {
        input: Vec<f64>,
        fc1_pre: Vec<f64>,
    },
}

/// Saved activations from a projector pass.
pub struct ProjCache {
    n: usize,
    h_pre: Vec<f64>,
    feats: Vec<f64>,
    /// Projector output before normalization.
    pub raw: Vec<f64>,
    /// Unit rows; what the contrastive loss and similarity defaults consume.
    pub normalized: Vec<f64>,
}

/// Gradient accumulator mirroring [`SemanticModel::tensors_mut`] order.
#[derive(Debug, Clone)]
pub struct ModelGrads {
    tensors: Vec<Vec<f64>>,
}

// Tensor order inside ModelGrads / tensors_mut: backbone (w1, b1, w2, b2), proj1
// (w, b), proj2 (w, b), prototypes.
const G_BB_W1: usize = 0;
const G_BB_B1: usize = 1;
const G_BB_W2: usize = 2;
const G_BB_B2: usize = 3;
const G_P1_W: usize = 4;
const G_P1_B: usize = 5;
const G_P2_W: usize = 6;
const G_P2_B: usize = 7;
const G_PROTO: usize = 8;

impl ModelGrads {
    pub fn zeros(model: &SemanticModel) -> Self {
        Self { tensors: model.tensor_sizes().iter().map(|&s| vec![0.0; s]).collect() }
    }

    pub fn as_refs(&self) -> Vec<&Vec<f64>> {
        self.tensors.iter().collect()
    }

    pub fn tensor(&self, idx: usize) -> &[f64] {
        &self.tensors[idx]
    }

    fn add_scaled(&mut self, idx: usize, values: &[f64], scale: f64) {
        for (t, v) in self.tensors[idx].iter_mut().zip(values) {
            *t += scale * v;
        }
    }
}

impl SemanticModel {
    pub fn new<R: Rng>(config: &ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let backbone = match config.backbone {
            BackboneKind::Conv => Backbone::Conv {
                conv1: Conv3x3::seeded(config.channels, config.conv1_channels, rng),
                conv2: Conv3x3::seeded(config.conv1_channels, config.conv2_channels, rng),
            },
            BackboneKind::Mlp => {
                let in_dim = config.width * config.height * config.channels;
                Backbone::Mlp {
                    fc1: Linear::seeded(in_dim, config.mlp_hidden, rng),
                    fc2: Linear::seeded(config.mlp_hidden, config.mlp_hidden, rng),
                }
            }
        };
        let feat_dim = config.feat_dim();
        let proj1 = Linear::seeded(feat_dim, config.proj_hidden, rng);
        let proj2 = Linear::seeded(config.proj_hidden, config.proj_dim, rng);
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let mut prototypes: Vec<f64> =
            (0..config.num_classes * config.proj_dim).map(|_| normal.sample(rng)).collect();
        prototypes = normalize_rows(&prototypes, config.num_classes, config.proj_dim);
        Ok(Self { config: config.clone(), backbone, proj1, proj2, prototypes })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    pub fn feat_dim(&self) -> usize {
        self.config.feat_dim()
    }

    pub fn proj_dim(&self) -> usize {
        self.config.proj_dim
    }

    pub fn temperature(&self) -> f64 {
        self.config.temperature
    }

    pub fn input_shape(&self) -> (usize, usize, usize) {
        (self.config.width, self.config.height, self.config.channels)
    }

    /// Parameter tensors in optimizer order; pairs positionally with
    /// [`ModelGrads::as_refs`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out: Vec<&mut Vec<f64>> = Vec::with_capacity(9);
        match &mut self.backbone {
            Backbone::Conv { conv1, conv2 } => {
                out.push(&mut conv1.w);
                out.push(&mut conv1.b);
                out.push(&mut conv2.w);
                out.push(&mut conv2.b);
            }
            Backbone::Mlp { fc1, fc2 } => {
                out.push(&mut fc1.w);
                out.push(&mut fc1.b);
                out.push(&mut fc2.w);
                out.push(&mut fc2.b);
            }
        }
        out.push(&mut self.proj1.w);
        out.push(&mut self.proj1.b);
        out.push(&mut self.proj2.w);
        out.push(&mut self.proj2.b);
        out.push(&mut self.prototypes);
        out
    }

    pub fn tensor_sizes(&self) -> Vec<usize> {
        let (bb_sizes, rest): (Vec<usize>, [usize; 5]) = match &self.backbone {
            Backbone::Conv { conv1, conv2 } => (
                vec![conv1.w.len(), conv1.b.len(), conv2.w.len(), conv2.b.len()],
                [
                    self.proj1.w.len(),
                    self.proj1.b.len(),
                    self.proj2.w.len(),
                    self.proj2.b.len(),
                    self.prototypes.len(),
                ],
            ),
            Backbone::Mlp { fc1, fc2 } => (
                vec![fc1.w.len(), fc1.b.len(), fc2.w.len(), fc2.b.len()],
                [
                    self.proj1.w.len(),
                    self.proj1.b.len(),
                    self.proj2.w.len(),
                    self.proj2.b.len(),
                    self.prototypes.len(),
                ],
            ),
        };
        bb_sizes.into_iter().chain(rest).collect()
    }

    /// Stored prototype matrix (`num_classes x proj_dim`).
    pub fn prototypes(&self) -> &[f64] {
        &self.prototypes
    }

    /// Prototype rows L2-normalized at point of use; these are the semantic class
    /// centers consumed by the contrastive loss and by label construction.
    pub fn normalized_prototypes(&self) -> Vec<f64> {
        normalize_rows(&self.prototypes, self.config.num_classes, self.config.proj_dim)
    }

    /// Alias for [`SemanticModel::normalized_prototypes`]; the semantic centers of
    /// each class.
    pub fn class_centers(&self) -> Vec<f64> {
        self.normalized_prototypes()
    }

    pub fn renormalize_prototypes(&mut self) {
        let dim = self.config.proj_dim;
        for r in 0..self.config.num_classes {
            let row = &mut self.prototypes[r * dim..(r + 1) * dim];
            let norm: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            // Rows already unit within drift tolerance stay untouched, so a
            // zero-gradient step leaves the parameters bit-identical.
            if norm == 0.0 || (norm - 1.0).abs() <= 1e-9 {
                continue;
            }
            for v in row.iter_mut() {
                *v /= norm;
            }
        }
    }

    fn check_images(&self, images: &[&Image]) -> Result<()> {
        if images.is_empty() {
            return Err(Error::EmptyInput("empty image batch".into()));
        }
        let expected = self.input_shape();
        for img in images {
            if img.shape() != expected {
                return Err(Error::ShapeMismatch(format!(
                    "image shape {:?} does not match model input {:?}",
                    img.shape(),
                    expected
                )));
            }
        }
        Ok(())
    }

    /// Backbone forward. Every sample is processed independently, so embeddings do
    /// not depend on batch composition.
    pub fn forward_features(&self, images: &[&Image]) -> Result<FeatCache> {
        self.check_images(images)?;
        let n = images.len();
        let (w, h, c) = self.input_shape();
        match &self.backbone {
            Backbone::Conv { conv1, conv2 } => {
                // Planar layout: [(sample * C + c) * H + y] * W + x.
                let mut input = vec![0.0f64; n * c * h * w];
                for (i, img) in images.iter().enumerate() {
                    for y in 0..h {
                        for x in 0..w {
                            for ch in 0..c {
                                input[((i * c + ch) * h + y) * w + x] = img.get(x, y, ch) as f64;
                            }
                        }
                    }
                }
                let conv1_pre = conv1.forward(&input, n, h, w);
                let conv1_post = relu_forward(&conv1_pre);
                let (pooled, ph, pw) =
                    avg_pool2_forward(&conv1_post, n, self.config.conv1_channels, h, w);
                let conv2_pre = conv2.forward(&pooled, n, ph, pw);
                let conv2_post = relu_forward(&conv2_pre);
                let feats =
                    global_avg_pool_forward(&conv2_post, n, self.config.conv2_channels, ph, pw);
                Ok(FeatCache {
                    n,
                    detail: FeatCacheDetail::Conv {
                        input,
                        conv1_pre,
                        pooled,
                        pooled_h: ph,
                        pooled_w: pw,
                        conv2_pre,
                    },
                    feats,
                })
            }
            Backbone::Mlp { fc1, fc2 } => {
                let dim = w * h * c;
                let mut input = vec![0.0f64; n * dim];
                for (i, img) in images.iter().enumerate() {
                    for (j, &p) in img.pixels().iter().enumerate() {
                        input[i * dim + j] = p as f64;
                    }
                }
                let fc1_pre = fc1.forward(&input, n);
                let fc1_post = relu_forward(&fc1_pre);
                let feats = fc2.forward(&fc1_post, n);
                Ok(FeatCache { n, detail: FeatCacheDetail::Mlp { input, fc1_pre }, feats })
            }
        }
    }

    /// Projector forward on backbone features.
    pub fn project(&self, feats: &[f64], n: usize) -> ProjCache {
        debug_assert_eq!(feats.len(), n * self.feat_dim());
        let h_pre = self.proj1.forward(feats, n);
        let h_post = relu_forward(&h_pre);
        let raw = self.proj2.forward(&h_post, n);
        let normalized = normalize_rows(&raw, n, self.config.proj_dim);
        ProjCache { n, h_pre, feats: feats.to_vec(), raw, normalized }
    }

    /// Full embedding pass: `(raw, normalized)` projector outputs, one row per image.
    pub fn embed(&self, images: &[&Image]) -> Result<(Vec<f64>, Vec<f64>)> {
        let feat = self.forward_features(images)?;
        let proj = self.project(&feat.feats, feat.n);
        Ok((proj.raw, proj.normalized))
    }

    /// Backprop `d_feats` (gradient at the backbone output) into backbone parameter
    /// grads, accumulating into `grads`.
    pub fn backward_features(&self, cache: &FeatCache, d_feats: &[f64], grads: &mut ModelGrads) {
        let n = cache.n;
        let (w, h, _c) = self.input_shape();
        match (&self.backbone, &cache.detail) {
            (
                Backbone::Conv { conv1, conv2 },
                FeatCacheDetail::Conv { input, conv1_pre, pooled, pooled_h, pooled_w, conv2_pre },
            ) => {
                let d_conv2_post = global_avg_pool_backward(
                    d_feats,
                    n,
                    self.config.conv2_channels,
                    *pooled_h,
                    *pooled_w,
                );
                let d_conv2_pre = relu_backward(conv2_pre, &d_conv2_post);
                let (d_pooled, gw2, gb2) =
                    conv2.backward(pooled, &d_conv2_pre, n, *pooled_h, *pooled_w);
                let d_conv1_post =
                    avg_pool2_backward(&d_pooled, n, self.config.conv1_channels, h, w);
                let d_conv1_pre = relu_backward(conv1_pre, &d_conv1_post);
                let (_, gw1, gb1) = conv1.backward(input, &d_conv1_pre, n, h, w);
                grads.add_scaled(G_BB_W1, &gw1, 1.0);
                grads.add_scaled(G_BB_B1, &gb1, 1.0);
                grads.add_scaled(G_BB_W2, &gw2, 1.0);
                grads.add_scaled(G_BB_B2, &gb2, 1.0);
            }
            (Backbone::Mlp { fc1, fc2 }, FeatCacheDetail::Mlp { input, fc1_pre }) => {
                let fc1_post = relu_forward(fc1_pre);
                let (d_fc1_post, gw2, gb2) = fc2.backward(&fc1_post, d_feats, n);
                let d_fc1_pre = relu_backward(fc1_pre, &d_fc1_post);
                let (_, gw1, gb1) = fc1.backward(input, &d_fc1_pre, n);
                grads.add_scaled(G_BB_W1, &gw1, 1.0);
                grads.add_scaled(G_BB_B1, &gb1, 1.0);
                grads.add_scaled(G_BB_W2, &gw2, 1.0);
                grads.add_scaled(G_BB_B2, &gb2, 1.0);
            }
            _ => unreachable!("cache kind always matches backbone kind"),
        }
    }

    /// Backprop a gradient at the *normalized* projector output through the
    /// projector and backbone, accumulating parameter grads.
    pub fn backward_projection(
        &self,
        feat_cache: &FeatCache,
        proj: &ProjCache,
        d_normalized: &[f64],
        grads: &mut ModelGrads,
    ) {
        let n = proj.n;
        let d_raw = normalize_rows_backward(&proj.raw, d_normalized, n, self.config.proj_dim);
        let h_post = relu_forward(&proj.h_pre);
        let (d_h_post, gw2, gb2) = self.proj2.backward(&h_post, &d_raw, n);
        let d_h_pre = relu_backward(&proj.h_pre, &d_h_post);
        let (d_feats, gw1, gb1) = self.proj1.backward(&proj.feats, &d_h_pre, n);
        grads.add_scaled(G_P1_W, &gw1, 1.0);
        grads.add_scaled(G_P1_B, &gb1, 1.0);
        grads.add_scaled(G_P2_W, &gw2, 1.0);
        grads.add_scaled(G_P2_B, &gb2, 1.0);
        self.backward_features(feat_cache, &d_feats, grads);
    }

    /// Backprop a gradient at the normalized prototype matrix into the stored
    /// prototype parameters (chain rule through the point-of-use normalization).
    pub fn backward_prototypes(&self, d_normalized_prototypes: &[f64], grads: &mut ModelGrads) {
        let d_stored = normalize_rows_backward(
            &self.prototypes,
            d_normalized_prototypes,
            self.config.num_classes,
            self.config.proj_dim,
        );
        grads.add_scaled(G_PROTO, &d_stored, 1.0);
    }
}

// ── Classifier head ───────────────────────────────────────────────────────

/// Single linear layer on backbone features (pre-projector).
#[derive(Debug, Clone)]
pub struct ClassifierHead {
    pub linear: Linear,
}

impl ClassifierHead {
    pub fn seeded<R: Rng>(feat_dim: usize, num_classes: usize, rng: &mut R) -> Self {
        Self { linear: Linear::seeded(feat_dim, num_classes, rng) }
    }

    pub fn forward(&self, feats: &[f64], n: usize) -> Vec<f64> {
        self.linear.forward(feats, n)
    }

    pub fn num_classes(&self) -> usize {
        self.linear.out_dim
    }
}

// ── Feature batches and the contrastive loss ──────────────────────────────

/// A batch of unit-norm embeddings with labels.
pub struct FeatureBatch {
    /// `len x dim`, rows unit-norm.
    pub features: Vec<f64>,
    pub labels: Vec<usize>,
    pub dim: usize,
}

impl FeatureBatch {
    pub fn new(features: Vec<f64>, labels: Vec<usize>, dim: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::EmptyInput("feature batch has no rows".into()));
        }
        if features.len() != labels.len() * dim {
            return Err(Error::ShapeMismatch(format!(
                "{} feature values for {} rows of dim {dim}",
                features.len(),
                labels.len()
            )));
        }
        for r in 0..labels.len() {
            let norm: f64 =
                features[r * dim..(r + 1) * dim].iter().map(|v| v * v).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidConfig(format!(
                    "feature row {r} has norm {norm}, expected unit norm"
                )));
            }
        }
        Ok(Self { features, labels, dim })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn row(&self, r: usize) -> &[f64] {
        &self.features[r * self.dim..(r + 1) * self.dim]
    }
}

/// Loss value plus analytic gradients with respect to the inputs as given:
/// the normalized feature rows and the normalized prototype rows.
pub struct ContrastiveOut {
    pub loss: f64,
    pub d_features: Vec<f64>,
    pub d_prototypes: Vec<f64>,
}

/// Supervised contrastive loss with class prototypes (see module docs for the
/// formula). `prototypes` must be the *normalized* `num_classes x dim` matrix.
/// Returns the mean loss over anchors with a non-empty positive set.
pub fn contrastive_loss(
    batch: &FeatureBatch,
    prototypes: &[f64],
    num_classes: usize,
    tau: f64,
) -> Result<ContrastiveOut> {
    let dim = batch.dim;
    let b = batch.len();
    if prototypes.len() != num_classes * dim {
        return Err(Error::ShapeMismatch(format!(
            "prototype matrix has {} values, expected {num_classes} x {dim}",
            prototypes.len()
        )));
    }
    if !tau.is_finite() || tau <= 0.0 {
        return Err(Error::InvalidConfig(format!("temperature must be > 0, got {tau}")));
    }
    for &label in &batch.labels {
        if label >= num_classes {
            return Err(Error::ClassOutOfRange { class: label, num_classes });
        }
    }

    let proto_row = |l: usize| &prototypes[l * dim..(l + 1) * dim];
    // Member id space: 0..b are batch rows, b + l is prototype l.
    let member_row = |m: usize| if m < b { batch.row(m) } else { proto_row(m - b) };
    let mut members: Vec<Vec<usize>> = (0..num_classes).map(|l| vec![b + l]).collect();
    for (i, &label) in batch.labels.iter().enumerate() {
        members[label].push(i);
    }
    // Keep batch members before the prototype, ordered by batch index, so the
    // summation order is deterministic.
    for m in &mut members {
        m.sort_unstable();
    }

    let dot = |a: &[f64], bvec: &[f64]| -> f64 { a.iter().zip(bvec).map(|(x, y)| x * y).sum() };

    let mut d_features = vec![0.0; batch.features.len()];
    let mut d_prototypes = vec![0.0; prototypes.len()];

    // First pass: count anchors with a non-empty positive set.
    let valid: Vec<usize> = (0..b)
        .filter(|&i| members[batch.labels[i]].iter().any(|&m| m != i))
        .collect();
    if valid.is_empty() {
        return Err(Error::DegenerateBatch);
    }
    let inv_valid = 1.0 / valid.len() as f64;

    let mut total_loss = 0.0;
    for &i in &valid {
        let zi = batch.row(i);
        // Scaled similarities to every member, grouped by class.
        let mut sims: Vec<Vec<f64>> = Vec::with_capacity(num_classes);
        let mut max_sim = f64::NEG_INFINITY;
        for class_members in &members {
            let mut row = Vec::with_capacity(class_members.len());
            for &m in class_members {
                let s = dot(zi, member_row(m)) / tau;
                max_sim = max_sim.max(s);
                row.push(s);
            }
            sims.push(row);
        }

        // Stabilized denominator: sum_l (1/|A_l|) sum_j exp(s - max).
        let mut denom = 0.0;
        for (l, row) in sims.iter().enumerate() {
            let inv_size = 1.0 / members[l].len() as f64;
            for &s in row {
                denom += (s - max_sim).exp() * inv_size;
            }
        }
        let log_denom = max_sim + denom.ln();
        if !log_denom.is_finite() {
            return Err(Error::NonFiniteLoss { epoch: 0, step: 0, value: log_denom });
        }

        // Positives: members of the anchor's class, anchor excluded.
        let anchor_class = batch.labels[i];
        let num_pos = members[anchor_class].len() - 1;
        let inv_pos = 1.0 / num_pos as f64;
        let mut mean_pos = 0.0;
        for (slot, &m) in members[anchor_class].iter().enumerate() {
            if m != i {
                mean_pos += sims[anchor_class][slot];
            }
        }
        mean_pos *= inv_pos;
        total_loss += log_denom - mean_pos;

        // Gradients. d loss_i / d s(i,j) = denom_weight - positive_weight, where the
        // denominator weight applies to every member and the positive weight only to
        // members of P_i. s(i,j) = zi . zj / tau, so each term sends zj/tau into the
        // anchor row and zi/tau into the member row (both contributions accumulate,
        // which also handles the anchor appearing as its own denominator member).
        for (l, class_members) in members.iter().enumerate() {
            let inv_size = 1.0 / class_members.len() as f64;
            for (slot, &m) in class_members.iter().enumerate() {
                let s = sims[l][slot];
                let mut coeff = (s - max_sim).exp() * inv_size / denom;
                if l == anchor_class && m != i {
                    coeff -= inv_pos;
                }
                let g = coeff * inv_valid / tau;
                if g == 0.0 {
                    continue;
                }
                let zm = member_row(m);
                for d in 0..dim {
                    d_features[i * dim + d] += g * zm[d];
                }
                if m < b {
                    for d in 0..dim {
                        d_features[m * dim + d] += g * zi[d];
                    }
                } else {
                    let l_idx = m - b;
                    for d in 0..dim {
                        d_prototypes[l_idx * dim + d] += g * zi[d];
                    }
                }
            }
        }
    }

    let loss = total_loss * inv_valid;
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss { epoch: 0, step: 0, value: loss });
    }
    Ok(ContrastiveOut { loss, d_features, d_prototypes })
}

/// One SGD step on `alpha * contrastive_loss` for a labeled image batch, then
/// prototype re-normalization. Returns the (unscaled) loss value.
pub fn train_semantic_step(
    model: &mut SemanticModel,
    images: &[&Image],
    labels: &[usize],
    opt: &mut crate::nn::SgdMomentum,
    lr: f64,
    alpha: f64,
) -> Result<f64> {
    if images.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} images but {} labels",
            images.len(),
            labels.len()
        )));
    }
    let feat = model.forward_features(images)?;
    let proj = model.project(&feat.feats, feat.n);
    let fb = FeatureBatch::new(proj.normalized.clone(), labels.to_vec(), model.proj_dim())?;
    let out = contrastive_loss(&fb, &model.normalized_prototypes(), model.num_classes(), model.temperature())?;

    let mut grads = ModelGrads::zeros(model);
    if alpha != 0.0 {
        let d_norm: Vec<f64> = out.d_features.iter().map(|g| g * alpha).collect();
        let d_proto: Vec<f64> = out.d_prototypes.iter().map(|g| g * alpha).collect();
        model.backward_projection(&feat, &proj, &d_norm, &mut grads);
        model.backward_prototypes(&d_proto, &mut grads);
    }
    let grad_refs = grads.as_refs();
    let mut params = model.tensors_mut();
    opt.step(&mut params, &grad_refs, lr);
    drop(params);
    model.renormalize_prototypes();
    Ok(out.loss)
}

// ── Checkpoints ───────────────────────────────────────────────────────────
//
// Versioned binary blob: magic "CCMX1", a little-endian u32 dimension header
// (backbone kind, width, height, channels, num_classes, conv1, conv2, mlp_hidden,
// proj_hidden, proj_dim), an f32 temperature, then every parameter tensor as
// little-endian f32 in declaration order (backbone, projector, prototypes, head).

pub fn checkpoint_to_bytes(model: &SemanticModel, head: &ClassifierHead) -> Vec<u8> {
    let cfg = &model.config;
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    let kind = match cfg.backbone {
        BackboneKind::Conv => 0u32,
        BackboneKind::Mlp => 1u32,
    };
    for v in [
        kind,
        cfg.width as u32,
        cfg.height as u32,
        cfg.channels as u32,
        cfg.num_classes as u32,
        cfg.conv1_channels as u32,
        cfg.conv2_channels as u32,
        cfg.mlp_hidden as u32,
        cfg.proj_hidden as u32,
        cfg.proj_dim as u32,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&(cfg.temperature as f32).to_le_bytes());

    let mut model_clone = model.clone();
    for tensor in model_clone.tensors_mut() {
        for &v in tensor.iter() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    for tensor in [&head.linear.w, &head.linear.b] {
        for &v in tensor.iter() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<(SemanticModel, ClassifierHead)> {
    let mut cursor = bytes;
    let mut magic = [0u8; 5];
    take(&mut cursor, &mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::CheckpointMismatch(format!(
            "bad magic {magic:?}, expected {CHECKPOINT_MAGIC:?}"
        )));
    }
    let mut header = [0u32; 10];
    for h in &mut header {
        let mut buf = [0u8; 4];
        take(&mut cursor, &mut buf)?;
        *h = u32::from_le_bytes(buf);
    }
    let mut tbuf = [0u8; 4];
    take(&mut cursor, &mut tbuf)?;
    let temperature = f32::from_le_bytes(tbuf) as f64;

    let backbone = match header[0] {
        0 => BackboneKind::Conv,
        1 => BackboneKind::Mlp,
        other => {
            return Err(Error::CheckpointMismatch(format!("unknown backbone kind {other}")))
        }
    };
    let config = ModelConfig {
        width: header[1] as usize,
        height: header[2] as usize,
        channels: header[3] as usize,
        num_classes: header[4] as usize,
        backbone,
        conv1_channels: header[5] as usize,
        conv2_channels: header[6] as usize,
        mlp_hidden: header[7] as usize,
        proj_hidden: header[8] as usize,
        proj_dim: header[9] as usize,
        temperature,
    };
    config.validate().map_err(|e| Error::CheckpointMismatch(e.to_string()))?;

    // Build a skeleton with the right shapes, then overwrite every tensor.
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let mut model = SemanticModel::new(&config, &mut rng)?;
    let mut head = ClassifierHead::seeded(config.feat_dim(), config.num_classes, &mut rng);

    let expected: usize = model.tensor_sizes().iter().sum::<usize>()
        + head.linear.w.len()
        + head.linear.b.len();
    if cursor.len() != expected * 4 {
        return Err(Error::CheckpointMismatch(format!(
            "parameter payload holds {} bytes, expected {}",
            cursor.len(),
            expected * 4
        )));
    }
    for tensor in model.tensors_mut() {
        for v in tensor.iter_mut() {
            let mut buf = [0u8; 4];
            take(&mut cursor, &mut buf)?;
            *v = f32::from_le_bytes(buf) as f64;
        }
    }
    for tensor in [&mut head.linear.w, &mut head.linear.b] {
        for v in tensor.iter_mut() {
            let mut buf = [0u8; 4];
            take(&mut cursor, &mut buf)?;
            *v = f32::from_le_bytes(buf) as f64;
        }
    }
    Ok((model, head))
}

fn take(cursor: &mut &[u8], buf: &mut [u8]) -> Result<()> {
    if cursor.len() < buf.len() {
        return Err(Error::CheckpointMismatch("truncated checkpoint".into()));
    }
    buf.copy_from_slice(&cursor[..buf.len()]);
    *cursor = &cursor[buf.len()..];
    Ok(())
}

pub fn save_checkpoint(model: &SemanticModel, head: &ClassifierHead, path: &Path) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    file.write_all(&checkpoint_to_bytes(model, head))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(SemanticModel, ClassifierHead)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    checkpoint_from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::SgdMomentum;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_config(backbone: BackboneKind) -> ModelConfig {
        ModelConfig {
            width: 4,
            height: 4,
            channels: 2,
            num_classes: 3,
            backbone,
            conv1_channels: 3,
            conv2_channels: 4,
            mlp_hidden: 6,
            proj_hidden: 5,
            proj_dim: 4,
            temperature: 0.3,
        }
    }

    fn random_images(n: usize, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Vec<Image> {
        (0..n)
            .map(|_| {
                let pixels: Vec<f32> = (0..cfg.width * cfg.height * cfg.channels)
                    .map(|_| rng.random::<f32>())
                    .collect();
                Image::new(cfg.width, cfg.height, cfg.channels, pixels).unwrap()
            })
            .collect()
    }

    fn unit_rows(rows: usize, dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let raw: Vec<f64> = (0..rows * dim).map(|_| rng.random::<f64>() - 0.5).collect();
        normalize_rows(&raw, rows, dim)
    }

    /// Direct scalar transcription of the loss formula on a hand-built instance:
    /// two anchors, two classes, two dims, tau = 0.5.
    #[test]
    fn loss_matches_hand_transcription() {
        let features = vec![1.0, 0.0, 0.0, 1.0];
        let labels = vec![0usize, 1usize];
        let protos = vec![0.6, 0.8, 0.8, -0.6];
        let tau = 0.5;
        let fb = FeatureBatch::new(features, labels, 2).unwrap();
        let out = contrastive_loss(&fb, &protos, 2, tau).unwrap();

        // Anchor 1 (class 0): positive set {c0}. A_0 = {z1, c0}, A_1 = {z2, c1}.
        let denom1 = 0.5 * ((2.0f64).exp() + (1.2f64).exp()) + 0.5 * (1.0 + (1.6f64).exp());
        let loss1 = denom1.ln() - 1.2;
        // Anchor 2 (class 1): positive set {c1}.
        let denom2 = 0.5 * (1.0 + (1.6f64).exp()) + 0.5 * ((2.0f64).exp() + (-1.2f64).exp());
        let loss2 = denom2.ln() - (-1.2);
        let expected = 0.5 * (loss1 + loss2);
        assert!(
            (out.loss - expected).abs() <= 1e-9 * expected.abs().max(1.0),
            "{} vs {expected}",
            out.loss
        );
    }

    #[test]
    fn loss_is_log_classes_when_all_similarities_equal() {
        // Every feature and prototype identical: the ratio inside the log collapses
        // to 1/|Y| regardless of temperature.
        let v = vec![1.0, 0.0];
        let features = [v.clone(), v.clone(), v.clone()].concat();
        let labels = vec![0, 1, 0];
        let protos = [v.clone(), v].concat();
        for tau in [0.1, 0.2] {
            let fb = FeatureBatch::new(features.clone(), labels.clone(), 2).unwrap();
            let out = contrastive_loss(&fb, &protos, 2, tau).unwrap();
            assert!((out.loss - (2.0f64).ln()).abs() < 1e-12, "tau {tau}: {}", out.loss);
        }
    }

    #[test]
    fn loss_is_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let dim = 4;
        let features = unit_rows(5, dim, &mut rng);
        let labels = vec![0, 1, 2, 0, 1];
        let protos = unit_rows(3, dim, &mut rng);
        let fb = FeatureBatch::new(features.clone(), labels.clone(), dim).unwrap();
        let base = contrastive_loss(&fb, &protos, 3, 0.2).unwrap().loss;

        let perm = [3, 0, 4, 2, 1];
        let mut pf = Vec::new();
        let mut pl = Vec::new();
        for &p in &perm {
            pf.extend_from_slice(&features[p * dim..(p + 1) * dim]);
            pl.push(labels[p]);
        }
        let fb2 = FeatureBatch::new(pf, pl, dim).unwrap();
        let permuted = contrastive_loss(&fb2, &protos, 3, 0.2).unwrap().loss;
        assert!((base - permuted).abs() < 1e-10);
    }

    #[test]
    fn loss_finite_for_singleton_class_batch() {
        // One anchor whose class appears nowhere else: the prototype is the only
        // positive, so the loss is still defined.
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let features = unit_rows(1, 3, &mut rng);
        let protos = unit_rows(4, 3, &mut rng);
        let fb = FeatureBatch::new(features, vec![2], 3).unwrap();
        let out = contrastive_loss(&fb, &protos, 4, 0.1).unwrap();
        assert!(out.loss.is_finite());
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..10 {
            let b = 1 + (trial % 5);
            let dim = 3 + (trial % 4);
            let classes = 2 + (trial % 2);
            let features = unit_rows(b, dim, &mut rng);
            let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..classes)).collect();
            let protos = unit_rows(classes, dim, &mut rng);
            let tau = 0.15 + 0.1 * (trial as f64);

            let fb = FeatureBatch::new(features.clone(), labels.clone(), dim).unwrap();
            let out = contrastive_loss(&fb, &protos, classes, tau).unwrap();

            // Finite differences on the raw matrices (the loss is defined for any
            // rows; unit norm is only the caller's contract).
            let eps = 1e-6;
            let loss_at = |f: &[f64], p: &[f64]| -> f64 {
                let fb = FeatureBatch { features: f.to_vec(), labels: labels.clone(), dim };
                contrastive_loss(&fb, p, classes, tau).unwrap().loss
            };
            let mut worst: f64 = 0.0;
            let mut f_mut = features.clone();
            for i in 0..f_mut.len() {
                let orig = f_mut[i];
                f_mut[i] = orig + eps;
                let hi = loss_at(&f_mut, &protos);
                f_mut[i] = orig - eps;
                let lo = loss_at(&f_mut, &protos);
                f_mut[i] = orig;
                let fd = (hi - lo) / (2.0 * eps);
                worst = worst.max((fd - out.d_features[i]).abs());
            }
            let mut p_mut = protos.clone();
            for i in 0..p_mut.len() {
                let orig = p_mut[i];
                p_mut[i] = orig + eps;
                let hi = loss_at(&features, &p_mut);
                p_mut[i] = orig - eps;
                let lo = loss_at(&features, &p_mut);
                p_mut[i] = orig;
                let fd = (hi - lo) / (2.0 * eps);
                worst = worst.max((fd - out.d_prototypes[i]).abs());
            }
            assert!(worst < 1e-7, "trial {trial}: worst abs gradient error {worst}");
        }
    }

    #[test]
    fn loss_rejects_bad_inputs() {
        let fb = FeatureBatch::new(vec![1.0, 0.0], vec![0], 2).unwrap();
        assert!(contrastive_loss(&fb, &[1.0, 0.0], 1, 0.0).is_err());
        assert!(contrastive_loss(&fb, &[1.0], 1, 0.1).is_err());
        let bad_label = FeatureBatch::new(vec![1.0, 0.0], vec![3], 2).unwrap();
        assert!(matches!(
            contrastive_loss(&bad_label, &[1.0, 0.0, 0.0, 1.0], 2, 0.1),
            Err(Error::ClassOutOfRange { .. })
        ));
        assert!(FeatureBatch::new(vec![2.0, 0.0], vec![0], 2).is_err());
        assert!(FeatureBatch::new(vec![], vec![], 2).is_err());
    }

    #[test]
    fn embeddings_are_unit_and_batch_independent() {
        for kind in [BackboneKind::Conv, BackboneKind::Mlp] {
            let cfg = tiny_config(kind);
            let mut rng = ChaCha8Rng::seed_from_u64(8);
            let model = SemanticModel::new(&cfg, &mut rng).unwrap();
            let images = random_images(6, &cfg, &mut rng);
            let refs: Vec<&Image> = images.iter().collect();
            let (_, batch_norm) = model.embed(&refs).unwrap();
            for (i, img) in images.iter().enumerate() {
                let (_, single) = model.embed(&[img]).unwrap();
                assert_eq!(
                    &batch_norm[i * cfg.proj_dim..(i + 1) * cfg.proj_dim],
                    &single[..],
                    "row {i} must be identical regardless of batch composition"
                );
                let norm: f64 = single.iter().map(|v| v * v).sum::<f64>().sqrt();
                assert!((norm - 1.0).abs() < 1e-6);
            }
            // Same input twice in one batch: identical rows.
            let (_, dup) = model.embed(&[&images[0], &images[0]]).unwrap();
            assert_eq!(&dup[..cfg.proj_dim], &dup[cfg.proj_dim..]);
        }
    }

    #[test]
    fn prototypes_start_unit_norm() {
        let cfg = tiny_config(BackboneKind::Conv);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let model = SemanticModel::new(&cfg, &mut rng).unwrap();
        for r in 0..cfg.num_classes {
            let row = &model.prototypes()[r * cfg.proj_dim..(r + 1) * cfg.proj_dim];
            let norm: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-6);
        }
    }

    /// End-to-end gradient check: alpha * contrastive loss through backbone,
    /// projector, and prototypes, against central finite differences.
    #[test]
    fn model_gradients_match_finite_differences() {
        for kind in [BackboneKind::Conv, BackboneKind::Mlp] {
            let cfg = tiny_config(kind);
            let mut rng = ChaCha8Rng::seed_from_u64(10);
            let mut model = SemanticModel::new(&cfg, &mut rng).unwrap();
            let images = random_images(4, &cfg, &mut rng);
            let refs: Vec<&Image> = images.iter().collect();
            let labels = vec![0usize, 1, 2, 0];

            let loss_of = |model: &SemanticModel| -> f64 {
                let (_, normalized) = model.embed(&refs).unwrap();
                let fb = FeatureBatch::new(normalized, labels.clone(), cfg.proj_dim).unwrap();
                contrastive_loss(&fb, &model.normalized_prototypes(), cfg.num_classes, cfg.temperature)
                    .unwrap()
                    .loss
            };

            let feat = model.forward_features(&refs).unwrap();
            let proj = model.project(&feat.feats, 4);
            let fb = FeatureBatch::new(proj.normalized.clone(), labels.clone(), cfg.proj_dim).unwrap();
            let out =
                contrastive_loss(&fb, &model.normalized_prototypes(), cfg.num_classes, cfg.temperature)
                    .unwrap();
            let mut grads = ModelGrads::zeros(&model);
            model.backward_projection(&feat, &proj, &out.d_features, &mut grads);
            model.backward_prototypes(&out.d_prototypes, &mut grads);

            let eps = 1e-5;
            let num_tensors = model.tensor_sizes().len();
            for t in 0..num_tensors {
                let len = model.tensor_sizes()[t];
                let mut analytic = vec![0.0; len];
                analytic.copy_from_slice(grads.tensor(t));
                let mut fd = vec![0.0; len];
                for (j, slot) in fd.iter_mut().enumerate() {
                    let orig = model.tensors_mut()[t][j];
                    model.tensors_mut()[t][j] = orig + eps;
                    let hi = loss_of(&model);
                    model.tensors_mut()[t][j] = orig - eps;
                    let lo = loss_of(&model);
                    model.tensors_mut()[t][j] = orig;
                    *slot = (hi - lo) / (2.0 * eps);
                }
                let diff: f64 =
                    analytic.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                let scale: f64 = fd.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
                assert!(
                    diff / scale < 1e-6 || diff < 1e-10,
                    "{kind:?} tensor {t}: rel err {}",
                    diff / scale
                );
            }
        }
    }

    #[test]
    fn zero_lr_step_changes_nothing() {
        let cfg = tiny_config(BackboneKind::Mlp);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut model = SemanticModel::new(&cfg, &mut rng).unwrap();
        let before = checkpoint_to_bytes(&model, &ClassifierHead::seeded(cfg.feat_dim(), 3, &mut ChaCha8Rng::seed_from_u64(0)));
        let images = random_images(3, &cfg, &mut rng);
        let refs: Vec<&Image> = images.iter().collect();
        let mut opt = SgdMomentum::new(0.9, &model.tensor_sizes());
        train_semantic_step(&mut model, &refs, &[0, 1, 2], &mut opt, 0.0, 1.0).unwrap();
        let after = checkpoint_to_bytes(&model, &ClassifierHead::seeded(cfg.feat_dim(), 3, &mut ChaCha8Rng::seed_from_u64(0)));
        assert_eq!(before, after);
    }

    #[test]
    fn repeated_steps_reduce_loss() {
        let cfg = tiny_config(BackboneKind::Conv);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut model = SemanticModel::new(&cfg, &mut rng).unwrap();
        let images = random_images(6, &cfg, &mut rng);
        let refs: Vec<&Image> = images.iter().collect();
        let labels = [0usize, 0, 1, 1, 2, 2];
        let mut opt = SgdMomentum::new(0.9, &model.tensor_sizes());
        let mut losses = Vec::new();
        for _ in 0..25 {
            losses.push(
                train_semantic_step(&mut model, &refs, &labels, &mut opt, 0.05, 1.0).unwrap(),
            );
        }
        assert!(
            losses.last().unwrap() < losses.first().unwrap(),
            "loss should fall: {losses:?}"
        );
    }

    #[test]
    fn single_anchor_step_pulls_embedding_toward_prototype() {
        let cfg = tiny_config(BackboneKind::Mlp);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut model = SemanticModel::new(&cfg, &mut rng).unwrap();
        let images = random_images(1, &cfg, &mut rng);
        let label = 1usize;

        let alignment = |model: &SemanticModel| -> f64 {
            let (_, z) = model.embed(&[&images[0]]).unwrap();
            let protos = model.normalized_prototypes();
            z.iter()
                .zip(&protos[label * cfg.proj_dim..(label + 1) * cfg.proj_dim])
                .map(|(a, b)| a * b)
                .sum()
        };
        let before = alignment(&model);
        let mut opt = SgdMomentum::new(0.0, &model.tensor_sizes());
        train_semantic_step(&mut model, &[&images[0]], &[label], &mut opt, 0.01, 1.0).unwrap();
        let after = alignment(&model);
        assert!(after > before, "alignment must increase: {before} -> {after}");
    }

    #[test]
    fn prototypes_stay_unit_after_steps() {
        let cfg = tiny_config(BackboneKind::Conv);
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let mut model = SemanticModel::new(&cfg, &mut rng).unwrap();
        let images = random_images(4, &cfg, &mut rng);
        let refs: Vec<&Image> = images.iter().collect();
        let mut opt = SgdMomentum::new(0.9, &model.tensor_sizes());
        for _ in 0..5 {
            train_semantic_step(&mut model, &refs, &[0, 1, 2, 0], &mut opt, 0.1, 1.0).unwrap();
        }
        for r in 0..cfg.num_classes {
            let row = &model.prototypes()[r * cfg.proj_dim..(r + 1) * cfg.proj_dim];
            let norm: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-6, "row {r} norm {norm}");
        }
    }

    #[test]
    fn checkpoint_round_trip_preserves_parameters() {
        let cfg = tiny_config(BackboneKind::Conv);
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let mut model = SemanticModel::new(&cfg, &mut rng).unwrap();
        let head = ClassifierHead::seeded(cfg.feat_dim(), cfg.num_classes, &mut rng);
        let bytes = checkpoint_to_bytes(&model, &head);
        let (mut loaded, loaded_head) = checkpoint_from_bytes(&bytes).unwrap();

        // f32 storage: loaded params equal the f32 cast of the originals.
        let expected: Vec<f64> = model
            .tensors_mut()
            .iter()
            .flat_map(|t| t.iter().map(|&v| v as f32 as f64))
            .collect();
        let actual: Vec<f64> =
            loaded.tensors_mut().iter().flat_map(|t| t.iter().copied()).collect();
        assert_eq!(expected, actual);
        assert_eq!(
            head.linear.w.iter().map(|&v| v as f32 as f64).collect::<Vec<_>>(),
            loaded_head.linear.w
        );
        // Serializing again is byte-identical (f32 cast is idempotent).
        assert_eq!(checkpoint_to_bytes(&loaded, &loaded_head), bytes);
    }

    #[test]
    fn checkpoint_rejects_corruption() {
        let cfg = tiny_config(BackboneKind::Mlp);
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let model = SemanticModel::new(&cfg, &mut rng).unwrap();
        let head = ClassifierHead::seeded(cfg.feat_dim(), cfg.num_classes, &mut rng);
        let bytes = checkpoint_to_bytes(&model, &head);

        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(checkpoint_from_bytes(&bad_magic).is_err());
        assert!(checkpoint_from_bytes(&bytes[..bytes.len() - 4]).is_err());
        let mut extra = bytes;
        extra.extend_from_slice(&[0, 0, 0, 0]);
        assert!(checkpoint_from_bytes(&extra).is_err());
    }

    #[test]
    fn embed_rejects_wrong_shape() {
        let cfg = tiny_config(BackboneKind::Conv);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let model = SemanticModel::new(&cfg, &mut rng).unwrap();
        let wrong = Image::zeros(3, 3, 2).unwrap();
        assert!(matches!(model.embed(&[&wrong]), Err(Error::ShapeMismatch(_))));
    }
}
