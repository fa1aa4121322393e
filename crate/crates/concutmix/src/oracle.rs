//! Independent reference implementations of the numeric core, used to cross-check
//! the library. Every function here recomputes a quantity straight from its
//! definition with a deliberately different algorithm (plain ratio sums instead of
//! stabilized log-sum-exp, repeated max scans instead of sorting, per-bin rescans
//! instead of streaming accumulation), and [`run_all`] compares both paths on
//! seeded random instances.
//!
//! Keep this module free of calls into the library's math helpers: its value is
//! that a bug must be made twice, in different shapes, to slip through.

use rand::Rng;

use crate::dataset::{stream_rng, ClassCensus};
use crate::metrics::calibration;
use crate::rectify::{
    confidence, effective_count, rectify, semantic_label, similarity, CountActivation,
    SimilarityMetric,
};
use crate::semantic::{contrastive_loss, FeatureBatch};

const STREAM_ORACLE_BASE: u64 = 0x4f52_0100;

// ── Reference implementations ─────────────────────────────────────────────

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 0..a.len() {
        acc += a[i] * b[i];
    }
    acc
}

/// Prototype-anchored supervised contrastive loss, transcribed term by term:
/// per positive `p`, the log of `exp(zi.zp/tau)` over the class-averaged
/// denominator, averaged over positives, negated, averaged over anchors.
/// No stabilization; callers keep `|zi.zj| / tau` moderate.
pub fn contrastive_reference(
    features: &[f64],
    labels: &[usize],
    prototypes: &[f64],
    num_classes: usize,
    dim: usize,
    tau: f64,
) -> f64 {
    let b = labels.len();
    let feat = |i: usize| &features[i * dim..(i + 1) * dim];
    let proto = |l: usize| &prototypes[l * dim..(l + 1) * dim];

    let mut total = 0.0;
    for i in 0..b {
        let zi = feat(i);
        let yi = labels[i];

        let mut denom = 0.0;
        for l in 0..num_classes {
            let mut class_sum = 0.0;
            let mut class_members = 0usize;
            for (j, &lj) in labels.iter().enumerate() {
                if lj == l {
                    class_sum += (dot(zi, feat(j)) / tau).exp();
                    class_members += 1;
                }
            }
            class_sum += (dot(zi, proto(l)) / tau).exp();
            class_members += 1;
            denom += class_sum / class_members as f64;
        }

        let mut log_ratio_sum = 0.0;
        let mut positives = 0usize;
        for (j, &lj) in labels.iter().enumerate() {
            if j != i && lj == yi {
                log_ratio_sum += ((dot(zi, feat(j)) / tau).exp() / denom).ln();
                positives += 1;
            }
        }
        log_ratio_sum += ((dot(zi, proto(yi)) / tau).exp() / denom).ln();
        positives += 1;

        total += -(log_ratio_sum / positives as f64);
    }
    total / b as f64
}

/// Similarity to each center from the distance definition. `floor` is the
/// distance cutoff; the library pins it at 1e-8.
pub fn similarity_reference(
    feature: &[f64],
    centers: &[f64],
    metric: SimilarityMetric,
    floor: f64,
) -> Vec<f64> {
    let dim = feature.len();
    let num_classes = centers.len() / dim;
    let mut out = Vec::new();
    for c in 0..num_classes {
        let center = &centers[c * dim..(c + 1) * dim];
        let value = match metric {
            SimilarityMetric::ReciprocalEuclidean => {
                let mut sq = 0.0;
                for d in 0..dim {
                    let diff = feature[d] - center[d];
                    sq += diff * diff;
                }
                let dist = sq.sqrt();
                1.0 / if dist < floor { floor } else { dist }
            }
            SimilarityMetric::Cosine => (1.0 + dot(feature, center)) / 2.0 + 1e-12,
        };
        out.push(value);
    }
    out
}

/// Top-k support selection by repeated max scans, force-include by explicit
/// minimum-similarity eviction, normalization in ascending class order.
pub fn semantic_label_reference(
    sims: &[f64],
    k: usize,
    fg_class: usize,
    bg_class: usize,
    force_include: bool,
) -> Vec<f64> {
    let n = sims.len();
    let mut selected = vec![false; n];
    for _ in 0..k {
        // Max over unselected classes; the strict comparison keeps the earliest
        // (lowest id) class on ties.
        let mut best: Option<usize> = None;
        for c in 0..n {
            if selected[c] {
                continue;
            }
            match best {
                None => best = Some(c),
                Some(bc) => {
                    if sims[c] > sims[bc] {
                        best = Some(c);
                    }
                }
            }
        }
        selected[best.expect("k <= n leaves a candidate")] = true;
    }

    if force_include {
        for class in [fg_class, bg_class] {
            if !selected[class] {
                // Evict the weakest selected class that is not a mix source;
                // on ties the higher id goes (it ranks below the lower id).
                let mut evict: Option<usize> = None;
                for c in 0..n {
                    if !selected[c] || c == fg_class || c == bg_class {
                        continue;
                    }
                    match evict {
                        None => evict = Some(c),
                        Some(ec) => {
                            if sims[c] < sims[ec] || (sims[c] == sims[ec] && c > ec) {
                                evict = Some(c);
                            }
                        }
                    }
                }
                selected[evict.expect("support larger than source count")] = false;
                selected[class] = true;
            }
        }
    }

    let mut total = 0.0;
    for c in 0..n {
        if selected[c] {
            total += sims[c];
        }
    }
    let mut label = vec![0.0; n];
    for c in 0..n {
        if selected[c] {
            label[c] = sims[c] / total;
        }
    }
    label
}

pub fn effective_count_reference(lambda: f64, fg_count: usize, bg_count: usize) -> f64 {
    lambda * fg_count as f64 + (1.0 - lambda) * bg_count as f64
}

pub fn confidence_reference(
    effective_n: f64,
    counts: &[usize],
    omega: f64,
    activation: CountActivation,
) -> f64 {
    let phi = |n: f64| -> f64 {
        match activation {
            CountActivation::Log => (n + 1.0).ln(),
            CountActivation::Linear => n,
        }
    };
    let mut denom = 0.0;
    for &c in counts {
        denom += phi(c as f64);
    }
    let raw = omega * phi(effective_n) / denom;
    raw.clamp(0.0, 1.0)
}

pub fn rectify_reference(area: &[f64], semantic: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(area.len());
    for i in 0..area.len() {
        out.push((1.0 - gamma) * area[i] + gamma * semantic[i]);
    }
    out
}

/// Expected calibration error by rescanning all predictions once per bin.
/// Bin `k` of `B` covers `(k/B, (k+1)/B]`; a confidence of exactly 0 counts
/// into the first bin.
pub fn ece_reference(confidences: &[f64], correct: &[bool], num_bins: usize) -> f64 {
    let n = confidences.len() as f64;
    let b = num_bins as f64;
    let mut ece = 0.0;
    for k in 0..num_bins {
        let lo = k as f64 / b;
        let hi = (k + 1) as f64 / b;
        let mut members = 0usize;
        let mut acc = 0.0;
        let mut conf = 0.0;
        for (&c, &ok) in confidences.iter().zip(correct) {
            let inside = if k == 0 { c <= hi } else { c > lo && c <= hi };
            if inside {
                members += 1;
                conf += c;
                if ok {
                    acc += 1.0;
                }
            }
        }
        if members > 0 {
            let m = members as f64;
            ece += m / n * (acc / m - conf / m).abs();
        }
    }
    ece * 100.0
}

// ── Comparison harness ────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct OracleOutcome {
    pub name: &'static str,
    pub instances: usize,
    pub mismatches: usize,
    pub first_failure: Option<String>,
}

impl OracleOutcome {
    fn new(name: &'static str) -> Self {
        Self { name, instances: 0, mismatches: 0, first_failure: None }
    }

    fn record(&mut self, instance: usize, ok: bool, detail: impl FnOnce() -> String) {
        self.instances += 1;
        if !ok {
            self.mismatches += 1;
            if self.first_failure.is_none() {
                self.first_failure = Some(format!("instance {instance}: {}", detail()));
            }
        }
    }

    pub fn passed(&self) -> bool {
        self.mismatches == 0
    }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

fn unit_rows<R: Rng>(rows: usize, dim: usize, rng: &mut R) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows * dim);
    for _ in 0..rows {
        let mut row: Vec<f64> = (0..dim).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let norm: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-6 {
            row[0] = 1.0;
        }
        let norm: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        for v in &mut row {
            *v /= norm;
        }
        out.extend(row);
    }
    out
}

/// A confidence that keeps clear of bin edges, so the two binning routines
/// cannot disagree on measure-zero boundaries.
fn off_boundary_confidence<R: Rng>(rng: &mut R, bins: usize) -> f64 {
    loop {
        let c: f64 = rng.random();
        let t = c * bins as f64;
        if c > 1e-9 && (t - t.round()).abs() > 1e-6 {
            return c;
        }
    }
}

/// Compare the library against every reference implementation on `instances`
/// random cases per quantity. All comparisons are deterministic in `seed`.
pub fn run_all(instances: usize, seed: u64) -> Vec<OracleOutcome> {
    let mut outcomes = Vec::new();

    // Contrastive loss: relative tolerance 1e-9 (different summation shapes).
    {
        let mut rng = stream_rng(seed, STREAM_ORACLE_BASE);
        let mut out = OracleOutcome::new("contrastive_loss");
        for inst in 0..instances {
            let b = rng.random_range(1..7usize);
            let classes = rng.random_range(2..6usize);
            let dim = rng.random_range(2..7usize);
            let tau = 0.1 + rng.random::<f64>() * 0.9;
            let features = unit_rows(b, dim, &mut rng);
            let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..classes)).collect();
            let protos = unit_rows(classes, dim, &mut rng);

            let batch = FeatureBatch::new(features.clone(), labels.clone(), dim)
                .expect("generated rows are unit");
            let lib = contrastive_loss(&batch, &protos, classes, tau)
                .expect("generated instance is valid")
                .loss;
            let reference =
                contrastive_reference(&features, &labels, &protos, classes, dim, tau);
            out.record(inst, close(lib, reference, 1e-9), || {
                format!("library {lib} vs reference {reference}")
            });
        }
        outcomes.push(out);
    }

    // Similarity: relative tolerance 1e-9 per class.
    {
        let mut rng = stream_rng(seed, STREAM_ORACLE_BASE + 1);
        let mut out = OracleOutcome::new("similarity");
        for inst in 0..instances {
            let dim = rng.random_range(2..8usize);
            let classes = rng.random_range(1..8usize);
            let metric = if rng.random::<f64>() < 0.5 {
                SimilarityMetric::ReciprocalEuclidean
            } else {
                SimilarityMetric::Cosine
            };
            let feature = unit_rows(1, dim, &mut rng);
            let centers = unit_rows(classes, dim, &mut rng);
            let lib = similarity(&feature, &centers, metric).expect("valid instance");
            let reference = similarity_reference(&feature, &centers, metric, 1e-8);
            let ok = lib.iter().zip(&reference).all(|(&a, &b)| close(a, b, 1e-9));
            out.record(inst, ok, || format!("library {lib:?} vs reference {reference:?}"));
        }
        outcomes.push(out);
    }

    // Semantic label: bit-exact (identical selection contract and sum order).
    {
        let mut rng = stream_rng(seed, STREAM_ORACLE_BASE + 2);
        let mut out = OracleOutcome::new("semantic_label");
        for inst in 0..instances {
            let classes = rng.random_range(2..12usize);
            let sims: Vec<f64> = (0..classes).map(|_| rng.random::<f64>() + 1e-3).collect();
            let k = rng.random_range(2..=classes);
            let fg = rng.random_range(0..classes);
            let bg = rng.random_range(0..classes);
            let force = rng.random::<f64>() < 0.7;
            let lib = semantic_label(&sims, k, fg, bg, force).expect("valid instance");
            let reference = semantic_label_reference(&sims, k, fg, bg, force);
            let ok = lib.iter().zip(&reference).all(|(a, b)| a.to_bits() == b.to_bits());
            out.record(inst, ok, || format!("library {lib:?} vs reference {reference:?}"));
        }
        outcomes.push(out);
    }

    // Effective count: bit-exact (same closed form).
    {
        let mut rng = stream_rng(seed, STREAM_ORACLE_BASE + 3);
        let mut out = OracleOutcome::new("effective_count");
        for inst in 0..instances {
            let lambda: f64 = rng.random();
            let fg = rng.random_range(1..2000usize);
            let bg = rng.random_range(1..2000usize);
            let lib = effective_count(lambda, fg, bg).expect("valid instance");
            let reference = effective_count_reference(lambda, fg, bg);
            out.record(inst, lib.to_bits() == reference.to_bits(), || {
                format!("library {lib} vs reference {reference}")
            });
        }
        outcomes.push(out);
    }

    // Confidence: bit-exact (same accumulation order).
    {
        let mut rng = stream_rng(seed, STREAM_ORACLE_BASE + 4);
        let mut out = OracleOutcome::new("confidence");
        for inst in 0..instances {
            let classes = rng.random_range(1..12usize);
            let counts: Vec<usize> = (0..classes).map(|_| rng.random_range(1..1000)).collect();
            let census = ClassCensus::new(counts.clone()).expect("counts are positive");
            let n_eff = rng.random::<f64>() * 1000.0;
            let omega = rng.random::<f64>() * 2.0;
            let activation = if rng.random::<f64>() < 0.5 {
                CountActivation::Log
            } else {
                CountActivation::Linear
            };
            let lib = confidence(n_eff, &census, omega, activation).expect("valid instance");
            let reference = confidence_reference(n_eff, &counts, omega, activation);
            out.record(inst, lib.to_bits() == reference.to_bits(), || {
                format!("library {lib} vs reference {reference}")
            });
        }
        outcomes.push(out);
    }

    // Rectified label: bit-exact (same closed form per element).
    {
        let mut rng = stream_rng(seed, STREAM_ORACLE_BASE + 5);
        let mut out = OracleOutcome::new("rectified_label");
        for inst in 0..instances {
            let classes = rng.random_range(2..12usize);
            // A plausible area label: two classes sharing the mass.
            let mut area = vec![0.0; classes];
            let fg = rng.random_range(0..classes);
            let bg = rng.random_range(0..classes);
            let lambda: f64 = rng.random();
            if fg == bg {
                area[fg] = 1.0;
            } else {
                area[fg] = lambda;
                area[bg] = 1.0 - lambda;
            }
            let raw: Vec<f64> = (0..classes).map(|_| rng.random::<f64>() + 1e-3).collect();
            let total: f64 = raw.iter().sum();
            let semantic: Vec<f64> = raw.iter().map(|v| v / total).collect();
            let gamma: f64 = rng.random();
            let lib = rectify(&area, &semantic, gamma).expect("valid instance");
            let reference = rectify_reference(&area, &semantic, gamma);
            let ok = lib.iter().zip(&reference).all(|(a, b)| a.to_bits() == b.to_bits());
            out.record(inst, ok, || format!("library {lib:?} vs reference {reference:?}"));
        }
        outcomes.push(out);
    }

    // Calibration error: relative tolerance 1e-9, boundary-avoiding confidences.
    {
        let mut rng = stream_rng(seed, STREAM_ORACLE_BASE + 6);
        let mut out = OracleOutcome::new("calibration_error");
        for inst in 0..instances {
            let n = rng.random_range(1..60usize);
            let bins = rng.random_range(1..20usize);
            let confidences: Vec<f64> =
                (0..n).map(|_| off_boundary_confidence(&mut rng, bins)).collect();
            let correct: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < 0.6).collect();
            let lib = calibration(&confidences, &correct, bins).expect("valid instance").ece;
            let reference = ece_reference(&confidences, &correct, bins);
            out.record(inst, close(lib, reference, 1e-9), || {
                format!("library {lib} vs reference {reference}")
            });
        }
        outcomes.push(out);
    }

    outcomes
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_oracles_agree_with_library() {
        let outcomes = run_all(300, 17);
        assert_eq!(outcomes.len(), 7);
        for o in &outcomes {
            assert_eq!(o.instances, 300, "{}", o.name);
            assert!(o.passed(), "{}: {:?}", o.name, o.first_failure);
        }
    }

    #[test]
    fn different_seeds_generate_different_instances_but_still_agree() {
        for seed in [0, 1, 99] {
            assert!(run_all(50, seed).iter().all(|o| o.passed()));
        }
    }

    #[test]
    fn contrastive_reference_matches_hand_value() {
        // Same instance as the library's hand test: two anchors, two classes.
        let features = vec![1.0, 0.0, 0.0, 1.0];
        let labels = vec![0usize, 1usize];
        let protos = vec![0.6, 0.8, 0.8, -0.6];
        let value = contrastive_reference(&features, &labels, &protos, 2, 2, 0.5);
        let denom1 = 0.5 * ((2.0f64).exp() + (1.2f64).exp()) + 0.5 * (1.0 + (1.6f64).exp());
        let denom2 = 0.5 * (1.0 + (1.6f64).exp()) + 0.5 * ((2.0f64).exp() + (-1.2f64).exp());
        let expected = 0.5 * ((denom1.ln() - 1.2) + (denom2.ln() + 1.2));
        assert!((value - expected).abs() < 1e-12);
    }

    #[test]
    fn similarity_oracle_detects_a_changed_distance_floor() {
        // The floor constant is part of the contract: an oracle built with a
        // different floor must disagree on near-zero distances.
        let feature = vec![0.5, 0.5];
        let centers = vec![0.5, 0.5, 1.0, 0.0];
        let lib = similarity(&feature, &centers, SimilarityMetric::ReciprocalEuclidean).unwrap();
        let mutated =
            similarity_reference(&feature, &centers, SimilarityMetric::ReciprocalEuclidean, 1e-6);
        assert!(!close(lib[0], mutated[0], 1e-9), "floor mutation must be caught");
        let faithful =
            similarity_reference(&feature, &centers, SimilarityMetric::ReciprocalEuclidean, 1e-8);
        assert!(close(lib[0], faithful[0], 1e-9));
    }

    #[test]
    fn ece_reference_matches_hand_example() {
        let ece = ece_reference(&[0.9, 0.9, 0.4, 0.4], &[true, false, true, false], 2);
        assert!((ece - 25.0).abs() < 1e-9);
    }
}
