//! Subject aggregation and macro-averaged classification metrics.

use crate::data::ClassLabel;
use crate::error::{Error, Result};

/// Confidence-weighted voting: the subject-level probability is the mean
/// of its segment probabilities, thresholded at one half (ties go to the
/// depressed class).
pub fn aggregate_subject(segment_probs: &[f64]) -> Result<(f64, ClassLabel)> {
    if segment_probs.is_empty() {
        return Err(Error::contract("aggregate_subject over zero segments"));
    }
    let mean = segment_probs.iter().sum::<f64>() / segment_probs.len() as f64;
    let label = if mean >= 0.5 {
        ClassLabel::Depressed
    } else {
        ClassLabel::Control
    };
    Ok((mean, label))
}

#[derive(Clone, Copy, Debug, Default, serde::Serialize, serde::Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Confusion counts with the depressed class as positive.
#[derive(Clone, Copy, Debug, Default, serde::Serialize, serde::Deserialize)]
pub struct Confusion {
    pub true_negative: u64,
    pub false_positive: u64,
    pub false_negative: u64,
    pub true_positive: u64,
}

impl Confusion {
    pub fn total(&self) -> u64 {
        self.true_negative + self.false_positive + self.false_negative + self.true_positive
    }
}

#[derive(Clone, Copy, Debug, Default, serde::Serialize, serde::Deserialize)]
pub struct MetricsSummary {
    pub macro_f1: f64,
    pub macro_recall: f64,
    pub macro_precision: f64,
    pub control: ClassMetrics,
    pub depressed: ClassMetrics,
    pub confusion: Confusion,
}

fn ratio(num: u64, den: u64) -> f64 {
    // The 0/0 convention for degenerate predictors.
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn class_metrics(tp: u64, fp: u64, fn_: u64) -> ClassMetrics {
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    ClassMetrics {
        precision,
        recall,
        f1,
    }
}

/// Per-class precision/recall/F1 (0/0 defined as 0) and their unweighted
/// macro averages over the two classes.
pub fn compute_metrics(preds: &[ClassLabel], labels: &[ClassLabel]) -> Result<MetricsSummary> {
    if preds.len() != labels.len() {
        return Err(Error::contract(format!(
            "compute_metrics: {} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::contract("compute_metrics over zero subjects"));
    }
    let mut confusion = Confusion::default();
    for (&p, &y) in preds.iter().zip(labels) {
        match (y, p) {
            (ClassLabel::Control, ClassLabel::Control) => confusion.true_negative += 1,
            (ClassLabel::Control, ClassLabel::Depressed) => confusion.false_positive += 1,
            (ClassLabel::Depressed, ClassLabel::Control) => confusion.false_negative += 1,
            (ClassLabel::Depressed, ClassLabel::Depressed) => confusion.true_positive += 1,
        }
    }
    let depressed = class_metrics(
        confusion.true_positive,
        confusion.false_positive,
        confusion.false_negative,
    );
    let control = class_metrics(
        confusion.true_negative,
        confusion.false_negative,
        confusion.false_positive,
    );
    Ok(MetricsSummary {
        macro_f1: (control.f1 + depressed.f1) / 2.0,
        macro_recall: (control.recall + depressed.recall) / 2.0,
        macro_precision: (control.precision + depressed.precision) / 2.0,
        control,
        depressed,
        confusion,
    })
}

/// One evaluated subject.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct SubjectOutcome {
    pub subject_id: String,
    pub label: u8,
    pub probability: f64,
    pub predicted: u8,
}

/// Metrics plus the per-subject probabilities they were computed from.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct EvalMetrics {
    #[serde(flatten)]
    pub summary: MetricsSummary,
    pub subjects: Vec<SubjectOutcome>,
}

/// Mean and sample standard deviation (Welford's recurrence).
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for (i, &v) in values.iter().enumerate() {
        let delta = v - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (v - mean);
    }
    let sd = if values.len() > 1 {
        (m2 / (values.len() - 1) as f64).sqrt()
    } else {
        0.0
    };
    (mean, sd)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn labels(bits: &[u8]) -> Vec<ClassLabel> {
        bits.iter().map(|&b| ClassLabel::from_u8(b).unwrap()).collect()
    }

    #[test]
    fn aggregate_subject_examples() {
        let (p, c) = aggregate_subject(&[0.9, 0.2, 0.7]).unwrap();
        assert_relative_eq!(p, 0.6, max_relative = 1e-12);
        assert_eq!(c, ClassLabel::Depressed);

        // Exact boundary goes to the depressed class.
        let (_, c) = aggregate_subject(&[0.5, 0.5]).unwrap();
        assert_eq!(c, ClassLabel::Depressed);

        let (p, c) = aggregate_subject(&[0.3]).unwrap();
        assert_eq!(p, 0.3);
        assert_eq!(c, ClassLabel::Control);

        assert!(aggregate_subject(&[]).is_err());
    }

    #[test]
    fn aggregation_is_permutation_invariant() {
        let a = aggregate_subject(&[0.1, 0.8, 0.4, 0.9]).unwrap();
        let b = aggregate_subject(&[0.9, 0.4, 0.8, 0.1]).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn perfect_predictions_score_one() {
        let y = labels(&[1, 0, 1, 0]);
        let m = compute_metrics(&y, &y).unwrap();
        assert_eq!(m.macro_f1, 1.0);
        assert_eq!(m.macro_recall, 1.0);
        assert_eq!(m.macro_precision, 1.0);
        assert_eq!(m.confusion.total(), 4);
    }

    #[test]
    fn hand_derived_case() {
        // labels [1,1,0,0], preds [1,0,0,0]:
        // depressed: P=1, R=1/2, F1=2/3; control: P=2/3, R=1, F1=4/5.
        let m = compute_metrics(&labels(&[1, 0, 0, 0]), &labels(&[1, 1, 0, 0])).unwrap();
        assert_relative_eq!(m.depressed.f1, 2.0 / 3.0, max_relative = 1e-12);
        assert_relative_eq!(m.control.f1, 0.8, max_relative = 1e-12);
        assert!((m.macro_f1 - 11.0 / 15.0).abs() <= 1e-9);
    }

    #[test]
    fn degenerate_all_positive_predictor() {
        // All-one predictions on balanced labels: macro F1 = (2/3 + 0)/2.
        let m = compute_metrics(&labels(&[1, 1, 1, 1]), &labels(&[1, 1, 0, 0])).unwrap();
        assert_relative_eq!(m.macro_f1, 1.0 / 3.0, max_relative = 1e-12);
        assert_eq!(m.control.f1, 0.0);
    }

    #[test]
    fn macro_metrics_are_class_symmetric() {
        let preds = labels(&[1, 0, 1, 1, 0]);
        let ys = labels(&[1, 1, 0, 1, 0]);
        let m1 = compute_metrics(&preds, &ys).unwrap();
        let flip = |v: &[ClassLabel]| -> Vec<ClassLabel> {
            v.iter()
                .map(|c| match c {
                    ClassLabel::Control => ClassLabel::Depressed,
                    ClassLabel::Depressed => ClassLabel::Control,
                })
                .collect()
        };
        let m2 = compute_metrics(&flip(&preds), &flip(&ys)).unwrap();
        assert_relative_eq!(m1.macro_f1, m2.macro_f1, max_relative = 1e-12);
        assert_relative_eq!(m1.macro_recall, m2.macro_recall, max_relative = 1e-12);
        assert_relative_eq!(m1.macro_precision, m2.macro_precision, max_relative = 1e-12);
    }

    #[test]
    fn length_mismatch_is_rejected() {
        assert!(compute_metrics(&labels(&[1]), &labels(&[1, 0])).is_err());
    }

    #[test]
    fn mean_sd_matches_two_pass_oracle() {
        let values = [0.52, 0.61, 0.58, 0.49, 0.66];
        let (mean, sd) = mean_sd(&values);
        // Independent two-pass computation.
        let m2: f64 = values.iter().sum::<f64>() / values.len() as f64;
        let var2: f64 =
            values.iter().map(|v| (v - m2) * (v - m2)).sum::<f64>() / (values.len() - 1) as f64;
        assert_relative_eq!(mean, m2, max_relative = 1e-12);
        assert_relative_eq!(sd, var2.sqrt(), max_relative = 1e-12);

        let (_, sd1) = mean_sd(&[0.4]);
        assert_eq!(sd1, 0.0);
    }
}
