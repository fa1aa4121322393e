//! Semantically consistent label construction and confidence-weighted rectification.
//!
//! A mixed image gets two labels. The area label weights the two source classes by
//! pixel share. The semantic label looks at where the mixed image actually lands in
//! the learned embedding space: similarity to every class center is measured, the
//! strongest `k` classes form the support, and their similarities are normalized
//! into a distribution. The final target blends the two,
//!
//! ```text
//! y = (1 - gamma) * y_area + gamma * y_semantic
//! ```
//!
//! with `gamma` grown from the effective sample count of the mix, so the semantic
//! label only gets weight once enough examples back the classes involved.

use serde::{Deserialize, Serialize};

use crate::dataset::ClassCensus;
use crate::error::{Error, Result};

/// Distances shorter than this count as zero; keeps reciprocal similarity finite
/// when an embedding sits exactly on a center.
pub const DISTANCE_FLOOR: f64 = 1e-8;

// ── Similarity ────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityMetric {
    /// `1 / max(||z - c||, 1e-8)`. The default; sharp peaks near centers.
    ReciprocalEuclidean,
    /// `(1 + z.c) / 2`, shifted to stay strictly positive. Gentler falloff;
    /// assumes unit-norm inputs.
    Cosine,
}

impl SimilarityMetric {
    pub fn name(self) -> &'static str {
        match self {
            Self::ReciprocalEuclidean => "reciprocal_euclidean",
            Self::Cosine => "cosine",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "reciprocal_euclidean" | "euclid" => Ok(Self::ReciprocalEuclidean),
            "cosine" => Ok(Self::Cosine),
            other => Err(Error::InvalidConfig(format!(
                "unknown similarity metric {other:?}; expected euclid or cosine"
            ))),
        }
    }
}

/// Similarity of one embedding to every class center (`num_classes x dim`,
/// row-major). Always strictly positive.
pub fn similarity(feature: &[f64], centers: &[f64], metric: SimilarityMetric) -> Result<Vec<f64>> {
    let dim = feature.len();
    if dim == 0 {
        return Err(Error::EmptyInput("empty feature vector".into()));
    }
    if centers.is_empty() || !centers.len().is_multiple_of(dim) {
        return Err(Error::ShapeMismatch(format!(
            "center matrix of {} values cannot hold rows of dim {dim}",
            centers.len()
        )));
    }
    let num_classes = centers.len() / dim;
    let mut sims = Vec::with_capacity(num_classes);
    for c in 0..num_classes {
        let row = &centers[c * dim..(c + 1) * dim];
        let s = match metric {
            SimilarityMetric::ReciprocalEuclidean => {
                let dist =
                    feature.iter().zip(row).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                1.0 / dist.max(DISTANCE_FLOOR)
            }
            SimilarityMetric::Cosine => {
                let dot: f64 = feature.iter().zip(row).map(|(a, b)| a * b).sum();
                (1.0 + dot) / 2.0 + 1e-12
            }
        };
        if !s.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "non-finite similarity {s} for class {c}"
            )));
        }
        sims.push(s);
    }
    Ok(sims)
}

// ── Semantic label ────────────────────────────────────────────────────────

/// Normalized label over the `k` most similar classes.
///
/// Classes are ranked by similarity (ties broken toward the lower class id); the
/// top `k` form the support. With `force_include`, the two source classes of the
/// mix are pushed into the support if ranking left them out, each evicting the
/// worst-ranked member that is not itself a source class. Support similarities are
/// normalized to sum to one; everything outside the support is zero.
pub fn semantic_label(
    sims: &[f64],
    k: usize,
    fg_class: usize,
    bg_class: usize,
    force_include: bool,
) -> Result<Vec<f64>> {
    let num_classes = sims.len();
    if num_classes == 0 {
        return Err(Error::EmptyInput("empty similarity vector".into()));
    }
    if k == 0 || k > num_classes {
        return Err(Error::InvalidConfig(format!(
            "support size {k} outside 1..={num_classes}"
        )));
    }
    for (c, &s) in sims.iter().enumerate() {
        if !s.is_finite() || s < 0.0 {
            return Err(Error::InvalidConfig(format!("similarity {s} for class {c}")));
        }
    }
    if fg_class >= num_classes {
        return Err(Error::ClassOutOfRange { class: fg_class, num_classes });
    }
    if bg_class >= num_classes {
        return Err(Error::ClassOutOfRange { class: bg_class, num_classes });
    }
    let mixed = |c: usize| c == fg_class || c == bg_class;
    if force_include {
        let distinct_mixed = if fg_class == bg_class { 1 } else { 2 };
        if k < distinct_mixed {
            return Err(Error::InvalidConfig(format!(
                "support size {k} cannot hold {distinct_mixed} source classes"
            )));
        }
    }

    let mut order: Vec<usize> = (0..num_classes).collect();
    order.sort_by(|&a, &b| {
        sims[b].partial_cmp(&sims[a]).expect("similarities validated finite").then(a.cmp(&b))
    });
    let mut support: Vec<usize> = order[..k].to_vec();

    if force_include {
        // Insert fg then bg. Evicted slots are taken from the back, where the
        // worst-ranked members sit; already-inserted source classes are never
        // evicted. Non-source members keep their relative rank order, so the
        // second insertion still evicts the worst-ranked survivor.
        for class in [fg_class, bg_class] {
            if !support.contains(&class) {
                let evict = support
                    .iter()
                    .rposition(|&c| !mixed(c))
                    .expect("support of size >= distinct sources always has a non-source slot");
                support.remove(evict);
                support.push(class);
            }
        }
    }

    support.sort_unstable();
    let total: f64 = support.iter().map(|&c| sims[c]).sum();
    if total <= 0.0 {
        return Err(Error::InvalidConfig(
            "support similarities sum to zero; cannot normalize".into(),
        ));
    }
    let mut label = vec![0.0; num_classes];
    for &c in &support {
        label[c] = sims[c] / total;
    }
    Ok(label)
}

// ── Confidence ────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountActivation {
    /// `ln(n + 1)`: compresses the head so tail classes are not steamrolled.
    Log,
    /// Raw counts.
    Linear,
}

impl CountActivation {
    pub fn apply(self, n: f64) -> f64 {
        match self {
            Self::Log => (n + 1.0).ln(),
            Self::Linear => n,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Log => "log",
            Self::Linear => "linear",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "log" => Ok(Self::Log),
            "linear" => Ok(Self::Linear),
            other => Err(Error::InvalidConfig(format!(
                "unknown count activation {other:?}; expected log or linear"
            ))),
        }
    }
}

/// Effective sample count behind a mixed image: the area-weighted blend of the two
/// source classes' training counts.
pub fn effective_count(lambda: f64, fg_count: usize, bg_count: usize) -> Result<f64> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidConfig(format!("area ratio {lambda} outside [0, 1]")));
    }
    Ok(lambda * fg_count as f64 + (1.0 - lambda) * bg_count as f64)
}

/// Confidence weight for the semantic label:
/// `clamp(omega * phi(n_x) / sum_i phi(n_i), 0, 1)` over the training census.
pub fn confidence(
    effective_n: f64,
    census: &ClassCensus,
    omega: f64,
    activation: CountActivation,
) -> Result<f64> {
    if !omega.is_finite() || omega < 0.0 {
        return Err(Error::InvalidConfig(format!("omega must be finite and >= 0, got {omega}")));
    }
    if !effective_n.is_finite() || effective_n < 0.0 {
        return Err(Error::InvalidConfig(format!(
            "effective count must be finite and >= 0, got {effective_n}"
        )));
    }
    let denom: f64 = census.counts().iter().map(|&n| activation.apply(n as f64)).sum();
    // Census counts are >= 1, so both activations give a positive denominator.
    Ok((omega * activation.apply(effective_n) / denom).clamp(0.0, 1.0))
}

/// Blend the area label toward the semantic label with weight `gamma`.
/// `gamma = 0` returns the area label unchanged (bit-exactly, for non-negative
/// labels), `gamma = 1` the semantic label.
pub fn rectify(area_label: &[f64], semantic_label: &[f64], gamma: f64) -> Result<Vec<f64>> {
    if area_label.len() != semantic_label.len() {
        return Err(Error::ShapeMismatch(format!(
            "label lengths differ: {} vs {}",
            area_label.len(),
            semantic_label.len()
        )));
    }
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::InvalidConfig(format!("gamma {gamma} outside [0, 1]")));
    }
    Ok(area_label
        .iter()
        .zip(semantic_label)
        .map(|(&a, &s)| (1.0 - gamma) * a + gamma * s)
        .collect())
}

// ── Defaults ──────────────────────────────────────────────────────────────

/// Default support size: 30% of the class count, at least 2, at most 30.
pub fn default_topk(num_classes: usize) -> usize {
    ((0.3 * num_classes as f64).round() as usize).clamp(2, 30)
}

/// Default confidence scale, proportional to the class count.
pub fn default_omega(num_classes: usize) -> f64 {
    8e-4 * num_classes as f64
}
