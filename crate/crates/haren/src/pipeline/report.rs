//! Plain-text and delimited report writers. All output is deterministic
//! for a fixed report so repeated runs are byte-identical.

use std::io::Write;

use super::crossval::MetricsReport;
use super::LossRecord;
use crate::error::Result;

/// Human-readable key-value summary with a per-fold table.
pub fn write_report_txt<W: Write>(report: &MetricsReport, mut w: W) -> Result<()> {
    writeln!(w, "scenario: {}", report.scenario)?;
    if let Some(e) = report.best_epoch {
        writeln!(w, "best_epoch: {e}")?;
    }
    writeln!(w, "macro_f1: {:.4} ({:.4})", report.macro_f1.mean, report.macro_f1.sd)?;
    writeln!(
        w,
        "macro_recall: {:.4} ({:.4})",
        report.macro_recall.mean, report.macro_recall.sd
    )?;
    writeln!(
        w,
        "macro_precision: {:.4} ({:.4})",
        report.macro_precision.mean, report.macro_precision.sd
    )?;
    writeln!(w, "infeasible_ctc_pairs: {}", report.infeasible_ctc)?;
    writeln!(w)?;
    writeln!(w, "fold\tmacro_f1\tmacro_recall\tmacro_precision\tsubjects")?;
    for (i, fold) in report.folds.iter().enumerate() {
        writeln!(
            w,
            "{i}\t{:.4}\t{:.4}\t{:.4}\t{}",
            fold.summary.macro_f1,
            fold.summary.macro_recall,
            fold.summary.macro_precision,
            fold.subjects.len()
        )?;
    }
    Ok(())
}

/// One confusion-matrix row per fold.
pub fn write_confusion_csv<W: Write>(report: &MetricsReport, mut w: W) -> Result<()> {
    writeln!(w, "fold,true_negative,false_positive,false_negative,true_positive")?;
    for (i, fold) in report.folds.iter().enumerate() {
        let c = fold.summary.confusion;
        writeln!(
            w,
            "{i},{},{},{},{}",
            c.true_negative, c.false_positive, c.false_negative, c.true_positive
        )?;
    }
    Ok(())
}

/// ROC points over the pooled per-subject probabilities of all folds:
/// one row per threshold step, from (0,0) to (1,1).
pub fn write_roc_csv<W: Write>(report: &MetricsReport, mut w: W) -> Result<()> {
    let mut scored: Vec<(f64, bool)> = report
        .folds
        .iter()
        .flat_map(|f| f.subjects.iter().map(|s| (s.probability, s.label == 1)))
        .collect();
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(b.1.cmp(&a.1)));
    let positives = scored.iter().filter(|(_, y)| *y).count().max(1) as f64;
    let negatives = scored.iter().filter(|(_, y)| !*y).count().max(1) as f64;
    writeln!(w, "threshold,false_positive_rate,true_positive_rate")?;
    writeln!(w, "1,0,0")?;
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < scored.len() {
        let threshold = scored[i].0;
        // Consume all subjects tied at this threshold before emitting.
        while i < scored.len() && scored[i].0 == threshold {
            if scored[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        writeln!(
            w,
            "{},{},{}",
            threshold,
            fp as f64 / negatives,
            tp as f64 / positives
        )?;
    }
    Ok(())
}

/// Loss curves; `fold` is zero for single-run scenarios.
pub fn write_loss_history_csv<W: Write>(histories: &[Vec<LossRecord>], mut w: W) -> Result<()> {
    writeln!(w, "fold,epoch,batch,focal,ctc,combined")?;
    for (fold, history) in histories.iter().enumerate() {
        for r in history {
            writeln!(
                w,
                "{fold},{},{},{},{},{}",
                r.epoch,
                r.batch,
                r.focal,
                r.ctc.map_or(String::new(), |c| c.to_string()),
                r.combined
            )?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{EvalMetrics, MetricsSummary, SubjectOutcome};

    fn fake_report() -> MetricsReport {
        let subjects = vec![
            SubjectOutcome {
                subject_id: "a".into(),
                label: 1,
                probability: 0.9,
                predicted: 1,
            },
            SubjectOutcome {
                subject_id: "b".into(),
                label: 0,
                probability: 0.2,
                predicted: 0,
            },
            SubjectOutcome {
                subject_id: "c".into(),
                label: 0,
                probability: 0.7,
                predicted: 1,
            },
        ];
        let fold = EvalMetrics {
            summary: MetricsSummary::default(),
            subjects,
        };
        MetricsReport {
            scenario: "generalization".into(),
            folds: vec![fold],
            macro_f1: Default::default(),
            macro_recall: Default::default(),
            macro_precision: Default::default(),
            best_epoch: None,
            infeasible_ctc: 0,
        }
    }

    #[test]
    fn roc_starts_at_origin_and_ends_at_one_one() {
        let mut buf = Vec::new();
        write_roc_csv(&fake_report(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[1], "1,0,0");
        assert!(lines.last().unwrap().ends_with(",1,1") || lines.last().unwrap().contains(",1"));
        // Monotone non-decreasing rates.
        let mut prev = (0.0, 0.0);
        for l in &lines[1..] {
            let parts: Vec<f64> = l.split(',').skip(1).map(|v| v.parse().unwrap()).collect();
            assert!(parts[0] >= prev.0 && parts[1] >= prev.1);
            prev = (parts[0], parts[1]);
        }
    }

    #[test]
    fn text_report_lists_folds() {
        let mut buf = Vec::new();
        write_report_txt(&fake_report(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("scenario: generalization"));
        assert!(text.contains("fold\tmacro_f1"));
    }
}
