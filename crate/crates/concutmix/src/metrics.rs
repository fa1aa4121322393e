//! Evaluation: top-1 and per-class accuracy, head/medium/tail group breakdown,
//! confusion matrix, and confidence calibration.
//!
//! Group membership comes from the *training* census, not the validation split:
//! a class is "many-shot" because it trained on many examples, regardless of how
//! often it appears at evaluation time.

use serde::{Deserialize, Serialize};

use crate::dataset::ClassCensus;
use crate::error::{Error, Result};

// ── Shot groups ───────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Group {
    Many,
    Medium,
    Few,
}

/// Thresholds on training counts: `> many_threshold` is many-shot,
/// `< few_threshold` is few-shot, the closed band between them is medium.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupSpec {
    pub many_threshold: usize,
    pub few_threshold: usize,
}

impl Default for GroupSpec {
    fn default() -> Self {
        Self { many_threshold: 100, few_threshold: 20 }
    }
}

impl GroupSpec {
    pub fn validate(&self) -> Result<()> {
        if self.few_threshold > self.many_threshold {
            return Err(Error::InvalidConfig(format!(
                "few threshold {} exceeds many threshold {}",
                self.few_threshold, self.many_threshold
            )));
        }
        Ok(())
    }

    pub fn group_of(&self, train_count: usize) -> Group {
        if train_count > self.many_threshold {
            Group::Many
        } else if train_count < self.few_threshold {
            Group::Few
        } else {
            Group::Medium
        }
    }
}

// ── Accuracy ──────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    /// Fraction of correctly classified samples.
    pub top1: f64,
    /// Per-class accuracy; `None` for classes absent from the evaluation split.
    pub per_class: Vec<Option<f64>>,
    /// Mean of the defined per-class accuracies.
    pub macro_acc: f64,
    /// Group means of per-class accuracy; `None` when the group has no class
    /// with evaluation samples.
    pub many_acc: Option<f64>,
    pub medium_acc: Option<f64>,
    pub few_acc: Option<f64>,
}

/// Accuracy breakdown of `predictions` against `labels`, grouped by the training
/// census. Group accuracy is the unweighted mean of member-class accuracies.
pub fn evaluate(
    predictions: &[usize],
    labels: &[usize],
    train_census: &ClassCensus,
    spec: &GroupSpec,
) -> Result<EvalReport> {
    spec.validate()?;
    let num_classes = train_census.num_classes();
    if predictions.is_empty() {
        return Err(Error::EmptyInput("no predictions to evaluate".into()));
    }
    if predictions.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    for &v in predictions.iter().chain(labels) {
        if v >= num_classes {
            return Err(Error::ClassOutOfRange { class: v, num_classes });
        }
    }

    let mut seen = vec![0usize; num_classes];
    let mut hit = vec![0usize; num_classes];
    let mut correct = 0usize;
    for (&p, &l) in predictions.iter().zip(labels) {
        seen[l] += 1;
        if p == l {
            hit[l] += 1;
            correct += 1;
        }
    }
    let per_class: Vec<Option<f64>> = seen
        .iter()
        .zip(&hit)
        .map(|(&s, &h)| if s == 0 { None } else { Some(h as f64 / s as f64) })
        .collect();

    let group_mean = |group: Group| -> Option<f64> {
        let accs: Vec<f64> = (0..num_classes)
            .filter(|&c| spec.group_of(train_census.count(c)) == group)
            .filter_map(|c| per_class[c])
            .collect();
        if accs.is_empty() {
            None
        } else {
            Some(accs.iter().sum::<f64>() / accs.len() as f64)
        }
    };
    let defined: Vec<f64> = per_class.iter().flatten().copied().collect();
    let many_acc = group_mean(Group::Many);
    let medium_acc = group_mean(Group::Medium);
    let few_acc = group_mean(Group::Few);

    Ok(EvalReport {
        top1: correct as f64 / predictions.len() as f64,
        macro_acc: defined.iter().sum::<f64>() / defined.len() as f64,
        per_class,
        many_acc,
        medium_acc,
        few_acc,
    })
}

/// Row-major `num_classes x num_classes` matrix; entry `(true, predicted)`.
pub fn confusion_matrix(
    predictions: &[usize],
    labels: &[usize],
    num_classes: usize,
) -> Result<Vec<usize>> {
    if predictions.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let mut m = vec![0usize; num_classes * num_classes];
    for (&p, &l) in predictions.iter().zip(labels) {
        if p >= num_classes {
            return Err(Error::ClassOutOfRange { class: p, num_classes });
        }
        if l >= num_classes {
            return Err(Error::ClassOutOfRange { class: l, num_classes });
        }
        m[l * num_classes + p] += 1;
    }
    Ok(m)
}

// ── Calibration ───────────────────────────────────────────────────────────

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationBin {
    /// Half-open lower edge; the bin covers `(lo, hi]`.
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    /// Mean correctness of members; 0 for empty bins.
    pub accuracy: f64,
    /// Mean confidence of members; 0 for empty bins.
    pub confidence: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub bins: Vec<CalibrationBin>,
    /// Expected calibration error in percentage points:
    /// `100 * sum_b (|bin| / N) * |acc_b - conf_b|`.
    pub ece: f64,
}

/// Bin predictions by confidence into `num_bins` equal-width right-closed bins
/// over `(0, 1]` and compare accuracy to confidence inside each bin.
pub fn calibration(
    confidences: &[f64],
    correct: &[bool],
    num_bins: usize,
) -> Result<CalibrationReport> {
    if num_bins == 0 {
        return Err(Error::InvalidConfig("calibration needs at least one bin".into()));
    }
    if confidences.is_empty() {
        return Err(Error::EmptyInput("no predictions to calibrate".into()));
    }
    if confidences.len() != correct.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} confidences for {} outcomes",
            confidences.len(),
            correct.len()
        )));
    }
    for &c in confidences {
        if !(0.0..=1.0).contains(&c) {
            return Err(Error::InvalidConfig(format!("confidence {c} outside [0, 1]")));
        }
    }

    let b = num_bins as f64;
    let mut count = vec![0usize; num_bins];
    let mut acc_sum = vec![0.0f64; num_bins];
    let mut conf_sum = vec![0.0f64; num_bins];
    for (&conf, &ok) in confidences.iter().zip(correct) {
        // Right-closed bins: bin k covers (k/B, (k+1)/B]. A confidence of exactly
        // 0 joins the first bin.
        let idx = (((conf * b).ceil() as isize) - 1).clamp(0, num_bins as isize - 1) as usize;
        count[idx] += 1;
        acc_sum[idx] += if ok { 1.0 } else { 0.0 };
        conf_sum[idx] += conf;
    }

    let n = confidences.len() as f64;
    let mut bins = Vec::with_capacity(num_bins);
    let mut ece = 0.0;
    for k in 0..num_bins {
        let (accuracy, confidence) = if count[k] > 0 {
            (acc_sum[k] / count[k] as f64, conf_sum[k] / count[k] as f64)
        } else {
            (0.0, 0.0)
        };
        if count[k] > 0 {
            ece += count[k] as f64 / n * (accuracy - confidence).abs();
        }
        bins.push(CalibrationBin {
            lo: k as f64 / b,
            hi: (k + 1) as f64 / b,
            count: count[k],
            accuracy,
            confidence,
        });
    }
    Ok(CalibrationReport { bins, ece: ece * 100.0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn census(counts: &[usize]) -> ClassCensus {
        ClassCensus::new(counts.to_vec()).unwrap()
    }

    #[test]
    fn groups_split_on_training_counts() {
        let spec = GroupSpec::default();
        let c = census(&[500, 150, 50, 5]);
        let groups: Vec<Group> = c.counts().iter().map(|&n| spec.group_of(n)).collect();
        assert_eq!(groups, vec![Group::Many, Group::Many, Group::Medium, Group::Few]);
        // Boundary cases: the band 20..=100 is medium.
        assert_eq!(spec.group_of(101), Group::Many);
        assert_eq!(spec.group_of(100), Group::Medium);
        assert_eq!(spec.group_of(20), Group::Medium);
        assert_eq!(spec.group_of(19), Group::Few);
    }

    #[test]
    fn evaluate_hand_example() {
        let labels = [0, 0, 1, 1, 2];
        let preds = [0, 1, 1, 1, 0];
        let report = evaluate(&preds, &labels, &census(&[150, 50, 5]), &GroupSpec::default())
            .unwrap();
        assert!((report.top1 - 0.6).abs() < 1e-15);
        assert_eq!(report.per_class, vec![Some(0.5), Some(1.0), Some(0.0)]);
        assert_eq!(report.many_acc, Some(0.5));
        assert_eq!(report.medium_acc, Some(1.0));
        assert_eq!(report.few_acc, Some(0.0));
        assert!((report.macro_acc - 0.5).abs() < 1e-15);
    }

    #[test]
    fn group_without_eval_samples_is_none() {
        // Class 2 (few-shot) never appears in the labels.
        let labels = [0, 1];
        let preds = [0, 0];
        let report =
            evaluate(&preds, &labels, &census(&[150, 50, 5]), &GroupSpec::default()).unwrap();
        assert_eq!(report.per_class[2], None);
        assert_eq!(report.few_acc, None);
        assert_eq!(report.many_acc, Some(1.0));
        assert_eq!(report.medium_acc, Some(0.0));
    }

    #[test]
    fn top1_is_count_weighted_mean_of_class_accuracies() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..50 {
            let classes = rng.random_range(2..6usize);
            let n = rng.random_range(1..200usize);
            let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
            let preds: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
            let counts: Vec<usize> = (0..classes).map(|_| rng.random_range(1..300)).collect();
            let report =
                evaluate(&preds, &labels, &census(&counts), &GroupSpec::default()).unwrap();

            let mut weighted = 0.0;
            for c in 0..classes {
                let seen = labels.iter().filter(|&&l| l == c).count();
                if let Some(acc) = report.per_class[c] {
                    weighted += acc * seen as f64 / n as f64;
                }
            }
            assert!((report.top1 - weighted).abs() < 1e-9);
        }
    }

    #[test]
    fn evaluate_rejects_bad_inputs() {
        let c = census(&[10, 10]);
        let spec = GroupSpec::default();
        assert!(evaluate(&[], &[], &c, &spec).is_err());
        assert!(evaluate(&[0], &[0, 1], &c, &spec).is_err());
        assert!(evaluate(&[2], &[0], &c, &spec).is_err());
        assert!(evaluate(&[0], &[2], &c, &spec).is_err());
        let bad = GroupSpec { many_threshold: 10, few_threshold: 50 };
        assert!(evaluate(&[0], &[0], &c, &bad).is_err());
    }

    #[test]
    fn confusion_matrix_counts_and_trace() {
        let labels = [0, 0, 1, 1, 2];
        let preds = [0, 1, 1, 1, 0];
        let m = confusion_matrix(&preds, &labels, 3).unwrap();
        assert_eq!(m, vec![1, 1, 0, 0, 2, 0, 1, 0, 0]);
        let trace: usize = (0..3).map(|i| m[i * 3 + i]).sum();
        assert_eq!(trace, 3);
        // Row sums are per-class label counts.
        for c in 0..3 {
            let row: usize = m[c * 3..(c + 1) * 3].iter().sum();
            assert_eq!(row, labels.iter().filter(|&&l| l == c).count());
        }
        assert!(confusion_matrix(&[3], &[0], 3).is_err());
    }

    #[test]
    fn calibration_hand_example() {
        // Two bins: (0, 0.5] holds the 0.4s with acc 0.5 (gap 0.1), (0.5, 1] holds
        // the 0.9s with acc 0.5 (gap 0.4). ECE = 100 * (0.5*0.1 + 0.5*0.4) = 25.
        let report =
            calibration(&[0.9, 0.9, 0.4, 0.4], &[true, false, true, false], 2).unwrap();
        assert!((report.ece - 25.0).abs() < 1e-9);
        assert_eq!(report.bins.len(), 2);
        assert_eq!(report.bins[0].count, 2);
        assert!((report.bins[0].confidence - 0.4).abs() < 1e-12);
        assert!((report.bins[0].accuracy - 0.5).abs() < 1e-12);
        assert_eq!(report.bins[1].count, 2);
        assert!((report.bins[1].confidence - 0.9).abs() < 1e-12);
    }

    #[test]
    fn calibration_bins_are_right_closed() {
        // With two bins, 0.5 belongs to the first bin and anything above to the
        // second; 0 joins the first bin, 1 the last.
        let report = calibration(&[0.5, 0.500001, 0.0, 1.0], &[true; 4], 2).unwrap();
        assert_eq!(report.bins[0].count, 2);
        assert_eq!(report.bins[1].count, 2);
    }

    #[test]
    fn perfect_calibration_has_zero_ece() {
        // Bin (0.5, 1]: confidence 0.75, accuracy 3/4.
        let confs = [0.75, 0.75, 0.75, 0.75];
        let correct = [true, true, true, false];
        let report = calibration(&confs, &correct, 2).unwrap();
        assert!(report.ece.abs() < 1e-12);
    }

    #[test]
    fn empty_bins_contribute_nothing() {
        // Both confidences land in the last of 15 bins, (14/15, 1].
        let a = calibration(&[0.95, 0.94], &[true, false], 15).unwrap();
        let occupied: Vec<usize> =
            a.bins.iter().enumerate().filter(|(_, b)| b.count > 0).map(|(i, _)| i).collect();
        assert_eq!(occupied, vec![14]);
        assert!((a.ece - 100.0 * (0.945f64 - 0.5).abs()).abs() < 1e-9);
    }

    #[test]
    fn calibration_rejects_bad_inputs() {
        assert!(calibration(&[], &[], 15).is_err());
        assert!(calibration(&[0.5], &[true, false], 15).is_err());
        assert!(calibration(&[1.5], &[true], 15).is_err());
        assert!(calibration(&[-0.1], &[true], 15).is_err());
        assert!(calibration(&[0.5], &[true], 0).is_err());
    }
}
