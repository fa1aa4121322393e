//! The training loop: mixed-image synthesis, contrastive semantic space, label
//! rectification, and a jointly trained classifier head.
//!
//! Each step draws a background batch and a foreground batch, pastes a random
//! foreground patch onto each background, and trains two branches on one shared
//! backbone:
//!
//! * the contrastive branch embeds the *original* background images and pulls them
//!   toward their class prototypes (weight `alpha`);
//! * the classifier branch trains the linear head on the *synthetic* images against
//!   rectified labels (weight `beta`).
//!
//! Rectified labels blend the area label with a semantic label read off the current
//! embedding space. The blend weight grows with the effective sample count behind
//! the mix, so classes the space knows well can override pixel bookkeeping, while
//! barely learned tail classes keep their area label. The first `warmup_epochs`
//! train on pure area labels while the semantic space takes shape.
//!
//! Everything is seeded: same config plus same datasets gives bit-identical
//! parameters and epoch records.

use serde::{Deserialize, Serialize};

use crate::cutmix::{mix, sample_box, sample_lambda, SyntheticSample};
use crate::dataset::{stream_rng, ClassCensus, Dataset, Sampler, SamplerKind};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::metrics::{calibration, evaluate, CalibrationReport, EvalReport, GroupSpec};
use crate::nn::SgdMomentum;
use crate::rectify::{
    confidence, default_omega, default_topk, effective_count, rectify, semantic_label, similarity,
    CountActivation, SimilarityMetric,
};
use crate::semantic::{
    contrastive_loss, BackboneKind, ClassifierHead, FeatureBatch, ModelConfig, ModelGrads,
    SemanticModel,
};

// RNG substreams hung off the master seed.
const STREAM_MODEL: u64 = 0x4d44_0001;
const STREAM_FG: u64 = 0x4647_0001;
const STREAM_BG: u64 = 0x4247_0001;
const STREAM_MIX: u64 = 0x4d58_0001;

// ── Configuration ─────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    /// Linear decay from `lr` to `lr / epochs` across training.
    Linear,
}

/// Everything the training loop needs. `Default` gives a sane desk-scale setup;
/// fields left `None` resolve against the dataset (see the field docs).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Epochs trained on pure area labels before rectification switches on.
    /// `None` resolves to `epochs / 2`.
    pub warmup_epochs: Option<usize>,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub lr_schedule: LrSchedule,
    /// Contrastive branch weight.
    pub alpha: f64,
    /// Classifier branch weight.
    pub beta: f64,
    /// Contrastive temperature.
    pub tau: f64,
    /// Semantic label support size. `None` resolves to 30% of the class count,
    /// clamped to 2..=30.
    pub topk: Option<usize>,
    /// Confidence scale. `None` resolves to `8e-4 * num_classes`.
    pub omega: Option<f64>,
    pub activation: CountActivation,
    pub metric: SimilarityMetric,
    /// Keep both source classes of a mix inside the semantic label support.
    pub force_include_mixed: bool,
    /// Measure similarity on raw projector outputs instead of normalized ones.
    pub use_raw_features: bool,
    /// Skip the semantic path entirely and train on area labels; the baseline arm
    /// for ablations.
    pub disable_rectification: bool,
    pub fg_sampler: SamplerKind,
    pub bg_sampler: SamplerKind,
    pub backbone: BackboneKind,
    pub conv1_channels: usize,
    pub conv2_channels: usize,
    pub mlp_hidden: usize,
    pub proj_hidden: usize,
    pub proj_dim: usize,
    pub ece_bins: usize,
    pub group_spec: GroupSpec,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            warmup_epochs: None,
            batch_size: 32,
            lr: 0.05,
            momentum: 0.9,
            lr_schedule: LrSchedule::Constant,
            alpha: 1.0,
            beta: 1.0,
            tau: 0.1,
            topk: None,
            omega: None,
            activation: CountActivation::Log,
            metric: SimilarityMetric::ReciprocalEuclidean,
            force_include_mixed: true,
            use_raw_features: false,
            disable_rectification: false,
            fg_sampler: SamplerKind::Balanced,
            bg_sampler: SamplerKind::Random,
            backbone: BackboneKind::Conv,
            conv1_channels: 8,
            conv2_channels: 16,
            mlp_hidden: 64,
            proj_hidden: 32,
            proj_dim: 16,
            ece_bins: 15,
            group_spec: GroupSpec::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be positive".into()));
        }
        for (name, v) in [("lr", self.lr), ("alpha", self.alpha), ("beta", self.beta)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        if !self.momentum.is_finite() || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if !self.tau.is_finite() || self.tau <= 0.0 {
            return Err(Error::InvalidConfig(format!("tau must be > 0, got {}", self.tau)));
        }
        if let Some(omega) = self.omega {
            if !omega.is_finite() || omega < 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "omega must be finite and >= 0, got {omega}"
                )));
            }
        }
        if self.ece_bins == 0 {
            return Err(Error::InvalidConfig("ece_bins must be positive".into()));
        }
        self.group_spec.validate()?;
        Ok(())
    }

    pub fn resolved_warmup(&self) -> usize {
        self.warmup_epochs.unwrap_or(self.epochs / 2)
    }

    pub fn resolved_topk(&self, num_classes: usize) -> usize {
        self.topk.unwrap_or_else(|| default_topk(num_classes))
    }

    pub fn resolved_omega(&self, num_classes: usize) -> f64 {
        self.omega.unwrap_or_else(|| default_omega(num_classes))
    }

    pub fn model_config(&self, train: &Dataset) -> ModelConfig {
        let (width, height, channels) = train.shape();
        ModelConfig {
            width,
            height,
            channels,
            num_classes: train.num_classes(),
            backbone: self.backbone,
            conv1_channels: self.conv1_channels,
            conv2_channels: self.conv2_channels,
            mlp_hidden: self.mlp_hidden,
            proj_hidden: self.proj_hidden,
            proj_dim: self.proj_dim,
            temperature: self.tau,
        }
    }
}

// ── Records ───────────────────────────────────────────────────────────────

/// One line of the training log; all values from the epoch's end.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss_con: f64,
    pub train_loss_ce: f64,
    pub val_top1: f64,
    pub many_acc: Option<f64>,
    pub medium_acc: Option<f64>,
    pub few_acc: Option<f64>,
    pub ece: f64,
    /// Mean semantic-label weight over the epoch's synthetic samples; 0 during
    /// warmup and whenever rectification is disabled.
    pub gamma_mean: f64,
}

pub struct TrainOutput {
    pub model: SemanticModel,
    pub head: ClassifierHead,
    pub records: Vec<EpochRecord>,
    pub census: ClassCensus,
}

// ── Classification ────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub class: usize,
    /// Max softmax probability.
    pub confidence: f64,
}

/// Softmax cross-entropy against soft targets (each target row sums to 1).
/// Returns the mean loss and its gradient with respect to the logits.
pub fn soft_cross_entropy(
    logits: &[f64],
    targets: &[f64],
    n: usize,
    num_classes: usize,
) -> Result<(f64, Vec<f64>)> {
    if n == 0 {
        return Err(Error::EmptyInput("empty logit batch".into()));
    }
    if logits.len() != n * num_classes || targets.len() != n * num_classes {
        return Err(Error::ShapeMismatch(format!(
            "logits {} / targets {} vs {n} x {num_classes}",
            logits.len(),
            targets.len()
        )));
    }
    let mut loss = 0.0;
    let mut grad = vec![0.0; logits.len()];
    let inv_n = 1.0 / n as f64;
    for i in 0..n {
        let row = &logits[i * num_classes..(i + 1) * num_classes];
        let t = &targets[i * num_classes..(i + 1) * num_classes];
        let max = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let sum_exp: f64 = row.iter().map(|&l| (l - max).exp()).sum();
        let lse = max + sum_exp.ln();
        // loss_i = lse - sum_c t_c * l_c, assuming sum_c t_c = 1.
        let dot: f64 = row.iter().zip(t).map(|(l, tc)| l * tc).sum();
        loss += lse - dot;
        for c in 0..num_classes {
            let p = (row[c] - max).exp() / sum_exp;
            grad[i * num_classes + c] = (p - t[c]) * inv_n;
        }
    }
    Ok((loss * inv_n, grad))
}

/// Predict classes for a batch of images: argmax of the head logits (ties go to
/// the lower class id) with max-softmax confidence.
pub fn classify(
    model: &SemanticModel,
    head: &ClassifierHead,
    images: &[&Image],
) -> Result<Vec<Prediction>> {
    let feat = model.forward_features(images)?;
    let num_classes = head.num_classes();
    let logits = head.forward(&feat.feats, images.len());
    let mut out = Vec::with_capacity(images.len());
    for i in 0..images.len() {
        let row = &logits[i * num_classes..(i + 1) * num_classes];
        let mut best = 0usize;
        for (c, &l) in row.iter().enumerate() {
            if l > row[best] {
                best = c;
            }
        }
        let max = row[best];
        let sum_exp: f64 = row.iter().map(|&l| (l - max).exp()).sum();
        out.push(Prediction { class: best, confidence: 1.0 / sum_exp });
    }
    Ok(out)
}

/// Evaluate a model on a labeled dataset: accuracy breakdown plus calibration.
pub fn evaluate_model(
    model: &SemanticModel,
    head: &ClassifierHead,
    val: &Dataset,
    train_census: &ClassCensus,
    spec: &GroupSpec,
    ece_bins: usize,
    batch_size: usize,
) -> Result<(EvalReport, CalibrationReport)> {
    if val.is_empty() {
        return Err(Error::EmptyInput("empty evaluation dataset".into()));
    }
    let mut predictions = Vec::with_capacity(val.len());
    let mut confidences = Vec::with_capacity(val.len());
    let mut correct = Vec::with_capacity(val.len());
    let indices: Vec<usize> = (0..val.len()).collect();
    for chunk in indices.chunks(batch_size.max(1)) {
        let images: Vec<&Image> = chunk.iter().map(|&i| val.image(i)).collect();
        for (&i, pred) in chunk.iter().zip(classify(model, head, &images)?) {
            predictions.push(pred.class);
            confidences.push(pred.confidence);
            correct.push(pred.class == val.label(i));
        }
    }
    let report = evaluate(&predictions, val.labels(), train_census, spec)?;
    let cal = calibration(&confidences, &correct, ece_bins)?;
    Ok((report, cal))
}

// ── Training ──────────────────────────────────────────────────────────────

/// Build the rectified target for one synthetic sample against the current
/// semantic space. Returns `(label, gamma)`.
#[allow(clippy::too_many_arguments)]
fn rectified_target(
    sample: &SyntheticSample,
    embedding: &[f64],
    centers: &[f64],
    census: &ClassCensus,
    topk: usize,
    omega: f64,
    activation: CountActivation,
    metric: SimilarityMetric,
    force_include: bool,
) -> Result<(Vec<f64>, f64)> {
    let sims = similarity(embedding, centers, metric)?;
    let y_semantic = semantic_label(&sims, topk, sample.fg_class, sample.bg_class, force_include)?;
    let n_eff = effective_count(
        sample.lambda,
        census.count(sample.fg_class),
        census.count(sample.bg_class),
    )?;
    let gamma = confidence(n_eff, census, omega, activation)?;
    let label = rectify(&sample.area_label, &y_semantic, gamma)?;
    Ok((label, gamma))
}

/// Train a model from scratch. Deterministic in `config.seed`.
pub fn train(config: &TrainConfig, train_set: &Dataset, val_set: &Dataset) -> Result<TrainOutput> {
    config.validate()?;
    if train_set.shape() != val_set.shape() {
        return Err(Error::ShapeMismatch(format!(
            "train shape {:?} vs val shape {:?}",
            train_set.shape(),
            val_set.shape()
        )));
    }
    if train_set.num_classes() != val_set.num_classes() {
        return Err(Error::ShapeMismatch(format!(
            "train has {} classes, val has {}",
            train_set.num_classes(),
            val_set.num_classes()
        )));
    }
    let census = train_set.census()?;
    let num_classes = census.num_classes();
    let topk = config.resolved_topk(num_classes);
    let omega = config.resolved_omega(num_classes);
    let warmup = config.resolved_warmup();
    let (width, height, _) = train_set.shape();

    let mut model_rng = stream_rng(config.seed, STREAM_MODEL);
    let mut model = SemanticModel::new(&config.model_config(train_set), &mut model_rng)?;
    let mut head = ClassifierHead::seeded(model.feat_dim(), num_classes, &mut model_rng);

    let fg_sampler = Sampler::new(config.fg_sampler, train_set)?;
    let bg_sampler = Sampler::new(config.bg_sampler, train_set)?;
    let mut fg_rng = stream_rng(config.seed, STREAM_FG);
    let mut bg_rng = stream_rng(config.seed, STREAM_BG);
    let mut mix_rng = stream_rng(config.seed, STREAM_MIX);

    let mut opt_sizes = model.tensor_sizes();
    opt_sizes.push(head.linear.w.len());
    opt_sizes.push(head.linear.b.len());
    let mut opt = SgdMomentum::new(config.momentum, &opt_sizes);

    let steps_per_epoch = train_set.len().div_ceil(config.batch_size);
    let mut records = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let lr = match config.lr_schedule {
            LrSchedule::Constant => config.lr,
            LrSchedule::Linear => {
                config.lr * (config.epochs - epoch) as f64 / config.epochs as f64
            }
        };
        let in_warmup = epoch < warmup;
        let mut con_sum = 0.0;
        let mut ce_sum = 0.0;
        let mut gamma_sum = 0.0;
        let mut gamma_count = 0usize;

        for step in 0..steps_per_epoch {
            let b = config.batch_size;
            let bg_idx: Vec<usize> = (0..b).map(|_| bg_sampler.next_index(&mut bg_rng)).collect();
            let fg_idx: Vec<usize> = (0..b).map(|_| fg_sampler.next_index(&mut fg_rng)).collect();

            // Synthesize the mixed batch.
            let mut synthetic = Vec::with_capacity(b);
            for (&bi, &fi) in bg_idx.iter().zip(&fg_idx) {
                let lambda_raw = sample_lambda(&mut mix_rng);
                let patch = sample_box(width, height, lambda_raw, &mut mix_rng)?;
                synthetic.push(mix(
                    train_set.image(fi),
                    train_set.label(fi),
                    train_set.image(bi),
                    train_set.label(bi),
                    &patch,
                    num_classes,
                )?);
            }

            let map_err = |e: Error| match e {
                Error::NonFiniteLoss { value, .. } => Error::NonFiniteLoss { epoch, step, value },
                other => other,
            };

            let mut grads = ModelGrads::zeros(&model);

            // Contrastive branch: original background images, hard labels.
            let bg_images: Vec<&Image> = bg_idx.iter().map(|&i| train_set.image(i)).collect();
            let bg_labels: Vec<usize> = bg_idx.iter().map(|&i| train_set.label(i)).collect();
            let feat_o = model.forward_features(&bg_images)?;
            let proj_o = model.project(&feat_o.feats, b);
            let fb = FeatureBatch::new(proj_o.normalized.clone(), bg_labels, model.proj_dim())?;
            let con_out =
                contrastive_loss(&fb, &model.normalized_prototypes(), num_classes, config.tau)
                    .map_err(map_err)?;
            con_sum += con_out.loss;
            if config.alpha != 0.0 {
                let d_norm: Vec<f64> =
                    con_out.d_features.iter().map(|g| g * config.alpha).collect();
                let d_proto: Vec<f64> =
                    con_out.d_prototypes.iter().map(|g| g * config.alpha).collect();
                model.backward_projection(&feat_o, &proj_o, &d_norm, &mut grads);
                model.backward_prototypes(&d_proto, &mut grads);
            }

            // Classifier branch: synthetic images, rectified labels. The semantic
            // label reads the current space but contributes no gradient.
            let syn_images: Vec<&Image> = synthetic.iter().map(|s| &s.image).collect();
            let feat_s = model.forward_features(&syn_images)?;
            let mut targets = Vec::with_capacity(b * num_classes);
            if in_warmup || config.disable_rectification {
                for s in &synthetic {
                    targets.extend_from_slice(&s.area_label);
                    gamma_count += 1;
                }
            } else {
                let proj_s = model.project(&feat_s.feats, b);
                let embeddings =
                    if config.use_raw_features { &proj_s.raw } else { &proj_s.normalized };
                let centers = model.class_centers();
                let dim = model.proj_dim();
                for (i, s) in synthetic.iter().enumerate() {
                    let row = &embeddings[i * dim..(i + 1) * dim];
                    let (label, gamma) = rectified_target(
                        s,
                        row,
                        &centers,
                        &census,
                        topk,
                        omega,
                        config.activation,
                        config.metric,
                        config.force_include_mixed,
                    )?;
                    targets.extend_from_slice(&label);
                    gamma_sum += gamma;
                    gamma_count += 1;
                }
            }

            let logits = head.forward(&feat_s.feats, b);
            let (ce_loss, d_logits) =
                soft_cross_entropy(&logits, &targets, b, num_classes).map_err(map_err)?;
            ce_sum += ce_loss;

            let (mut head_gw, mut head_gb) = (
                vec![0.0; head.linear.w.len()],
                vec![0.0; head.linear.b.len()],
            );
            if config.beta != 0.0 {
                let d_scaled: Vec<f64> = d_logits.iter().map(|g| g * config.beta).collect();
                let (d_feats, gw, gb) = head.linear.backward(&feat_s.feats, &d_scaled, b);
                head_gw = gw;
                head_gb = gb;
                model.backward_features(&feat_s, &d_feats, &mut grads);
            }

            if !(con_out.loss.is_finite() && ce_loss.is_finite()) {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    step,
                    value: if con_out.loss.is_finite() { ce_loss } else { con_out.loss },
                });
            }

            let mut grad_refs = grads.as_refs();
            grad_refs.push(&head_gw);
            grad_refs.push(&head_gb);
            let mut params = model.tensors_mut();
            params.push(&mut head.linear.w);
            params.push(&mut head.linear.b);
            opt.step(&mut params, &grad_refs, lr);
            drop(params);
            model.renormalize_prototypes();
        }

        let (report, cal) = evaluate_model(
            &model,
            &head,
            val_set,
            &census,
            &config.group_spec,
            config.ece_bins,
            config.batch_size,
        )?;
        records.push(EpochRecord {
            epoch,
            train_loss_con: con_sum / steps_per_epoch as f64,
            train_loss_ce: ce_sum / steps_per_epoch as f64,
            val_top1: report.top1,
            many_acc: report.many_acc,
            medium_acc: report.medium_acc,
            few_acc: report.few_acc,
            ece: cal.ece,
            gamma_mean: if gamma_count == 0 { 0.0 } else { gamma_sum / gamma_count as f64 },
        });
    }

    Ok(TrainOutput { model, head, records, census })
}
