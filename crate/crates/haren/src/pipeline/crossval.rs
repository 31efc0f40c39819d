//! Subject-level stratified k-fold cross-validation and the two
//! evaluation scenarios.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::metrics::{mean_sd, EvalMetrics};
use super::{derive_seed, evaluate, train, train_with, LoadedCorpus, LossRecord, TrainConfig};
use crate::ctc::Codebook;
use crate::data::ClassLabel;
use crate::error::{Error, Result};
use crate::model::{init_params, ModelConfig, ModelParams, ModelVariant};

/// Fold assignment per subject (parallel to `subjects`). Subjects are
/// shuffled within each class and dealt round-robin, so per-fold class
/// counts differ from proportional by at most one and no subject straddles
/// folds.
pub fn stratified_kfold(
    subjects: &[(String, ClassLabel)],
    folds: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    if folds < 2 {
        return Err(Error::config("cross-validation requires at least 2 folds"));
    }
    for class in [ClassLabel::Control, ClassLabel::Depressed] {
        let n = subjects.iter().filter(|(_, l)| *l == class).count();
        if n < folds {
            return Err(Error::config(format!(
                "stratified {folds}-fold split needs at least {folds} subjects per class, class {class:?} has {n}"
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![0usize; subjects.len()];
    for class in [ClassLabel::Control, ClassLabel::Depressed] {
        let mut idx: Vec<usize> = subjects
            .iter()
            .enumerate()
            .filter(|(_, (_, l))| *l == class)
            .map(|(i, _)| i)
            .collect();
        idx.shuffle(&mut rng);
        for (pos, &i) in idx.iter().enumerate() {
            assignment[i] = pos % folds;
        }
    }
    Ok(assignment)
}

#[derive(Clone, Copy, Debug, Default, serde::Serialize, serde::Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
}

/// The serialized output of a scenario run.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct MetricsReport {
    pub scenario: String,
    /// Per-fold metrics; a single entry (the dev set) in upper-bound mode.
    pub folds: Vec<EvalMetrics>,
    pub macro_f1: MeanSd,
    pub macro_recall: MeanSd,
    pub macro_precision: MeanSd,
    /// Best epoch by dev macro-F1 (upper-bound mode only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub best_epoch: Option<usize>,
    /// CTC pairs skipped as infeasible during training.
    pub infeasible_ctc: usize,
}

impl MetricsReport {
    fn from_folds(
        scenario: &str,
        folds: Vec<EvalMetrics>,
        best_epoch: Option<usize>,
        infeasible_ctc: usize,
    ) -> Self {
        let stat = |f: &dyn Fn(&EvalMetrics) -> f64| {
            let values: Vec<f64> = folds.iter().map(f).collect();
            let (mean, sd) = mean_sd(&values);
            MeanSd { mean, sd }
        };
        MetricsReport {
            scenario: scenario.to_string(),
            macro_f1: stat(&|m| m.summary.macro_f1),
            macro_recall: stat(&|m| m.summary.macro_recall),
            macro_precision: stat(&|m| m.summary.macro_precision),
            folds,
            best_epoch,
            infeasible_ctc,
        }
    }
}

pub struct CrossvalOutcome {
    pub report: MetricsReport,
    /// Loss history per fold.
    pub histories: Vec<Vec<LossRecord>>,
}

/// Generalization scenario: stratified k-fold CV with a fixed epoch
/// budget; each fold's held-out partition is scored and the mean and
/// standard deviation across folds are reported.
pub fn run_generalization(
    corpus: &LoadedCorpus,
    model_cfg: &ModelConfig,
    variant: ModelVariant,
    codebook: Option<&Codebook>,
    train_cfg: &TrainConfig,
    folds: usize,
) -> Result<CrossvalOutcome> {
    let subjects = corpus.subjects();
    let assignment = stratified_kfold(&subjects, folds, derive_seed(train_cfg.seed, 0xF01D))?;
    let mut fold_metrics = Vec::with_capacity(folds);
    let mut histories = Vec::with_capacity(folds);
    let mut infeasible = 0usize;
    for fold in 0..folds {
        let held_out: Vec<String> = subjects
            .iter()
            .zip(&assignment)
            .filter(|(_, &a)| a == fold)
            .map(|((id, _), _)| id.clone())
            .collect();
        let train_subjects: Vec<String> = subjects
            .iter()
            .zip(&assignment)
            .filter(|(_, &a)| a != fold)
            .map(|((id, _), _)| id.clone())
            .collect();
        let train_idx = corpus.segments_of(train_subjects.iter());
        let eval_idx = corpus.segments_of(held_out.iter());

        let fold_seed = derive_seed(train_cfg.seed, fold as u64 + 1);
        let params = init_params(model_cfg, variant, fold_seed)?;
        let fold_train_cfg = TrainConfig {
            seed: fold_seed,
            ..*train_cfg
        };
        let outcome = train(corpus, &train_idx, params, codebook, &fold_train_cfg)?;
        infeasible += outcome.infeasible_ctc;
        fold_metrics.push(evaluate(corpus, &eval_idx, &outcome.params, train_cfg.precision)?);
        histories.push(outcome.history);
    }
    Ok(CrossvalOutcome {
        report: MetricsReport::from_folds("generalization", fold_metrics, None, infeasible),
        histories,
    })
}

pub struct UpperBoundOutcome {
    pub report: MetricsReport,
    pub history: Vec<LossRecord>,
    /// Parameters from the best dev epoch.
    pub params: ModelParams,
}

/// Upper-bound scenario: train on the `train` split and report the dev
/// split at the epoch with the highest dev macro-F1.
pub fn run_upper_bound(
    corpus: &LoadedCorpus,
    model_cfg: &ModelConfig,
    variant: ModelVariant,
    codebook: Option<&Codebook>,
    train_cfg: &TrainConfig,
) -> Result<UpperBoundOutcome> {
    let train_idx: Vec<usize> = corpus
        .segments
        .iter()
        .enumerate()
        .filter(|(_, s)| s.entry.split.as_deref() == Some("train"))
        .map(|(i, _)| i)
        .collect();
    let dev_idx: Vec<usize> = corpus
        .segments
        .iter()
        .enumerate()
        .filter(|(_, s)| s.entry.split.as_deref() == Some("dev"))
        .map(|(i, _)| i)
        .collect();
    if train_idx.is_empty() || dev_idx.is_empty() {
        return Err(Error::config(
            "upper-bound mode requires manifest split tags `train` and `dev`",
        ));
    }
    let params = init_params(model_cfg, variant, derive_seed(train_cfg.seed, 0x1217))?;
    let mut best: Option<(usize, EvalMetrics, ModelParams)> = None;
    let outcome = train_with(
        corpus,
        &train_idx,
        params,
        codebook,
        train_cfg,
        |epoch, p| {
            let m = evaluate(corpus, &dev_idx, p, train_cfg.precision)?;
            let better = match &best {
                None => true,
                Some((_, cur, _)) => m.summary.macro_f1 > cur.summary.macro_f1,
            };
            if better {
                best = Some((epoch, m, p.clone()));
            }
            Ok(())
        },
    )?;
    let (best_epoch, dev_metrics, best_params) = best.expect("at least one evaluation ran");
    Ok(UpperBoundOutcome {
        report: MetricsReport::from_folds(
            "upper-bound",
            vec![dev_metrics],
            Some(best_epoch),
            outcome.infeasible_ctc,
        ),
        history: outcome.history,
        params: best_params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn subjects(controls: usize, depressed: usize) -> Vec<(String, ClassLabel)> {
        let mut v = Vec::new();
        for i in 0..controls {
            v.push((format!("c{i}"), ClassLabel::Control));
        }
        for i in 0..depressed {
            v.push((format!("d{i}"), ClassLabel::Depressed));
        }
        v
    }

    #[test]
    fn exact_stratification_with_balanced_classes() {
        let subs = subjects(5, 5);
        let assign = stratified_kfold(&subs, 5, 1).unwrap();
        for fold in 0..5 {
            let c = subs
                .iter()
                .zip(&assign)
                .filter(|((_, l), &a)| a == fold && *l == ClassLabel::Control)
                .count();
            let d = subs
                .iter()
                .zip(&assign)
                .filter(|((_, l), &a)| a == fold && *l == ClassLabel::Depressed)
                .count();
            assert_eq!((c, d), (1, 1));
        }
    }

    #[test]
    fn folds_partition_the_subject_set() {
        let subs = subjects(13, 9);
        let assign = stratified_kfold(&subs, 4, 3).unwrap();
        assert_eq!(assign.len(), subs.len());
        assert!(assign.iter().all(|&a| a < 4));
        // Every subject appears in exactly one fold by construction; check
        // fold sizes cover the set.
        let total: usize = (0..4).map(|f| assign.iter().filter(|&&a| a == f).count()).sum();
        assert_eq!(total, subs.len());
    }

    #[test]
    fn proportional_counts_on_uneven_classes() {
        // 23 depressed / 29 control over 5 folds: per-fold counts must be
        // {4,5} and {5,6}.
        let subs = subjects(29, 23);
        let assign = stratified_kfold(&subs, 5, 11).unwrap();
        for fold in 0..5 {
            let d = subs
                .iter()
                .zip(&assign)
                .filter(|((_, l), &a)| a == fold && *l == ClassLabel::Depressed)
                .count();
            let c = subs
                .iter()
                .zip(&assign)
                .filter(|((_, l), &a)| a == fold && *l == ClassLabel::Control)
                .count();
            assert!(d == 4 || d == 5, "depressed count {d}");
            assert!(c == 5 || c == 6, "control count {c}");
        }
    }

    #[test]
    fn too_few_subjects_is_a_configuration_error() {
        let subs = subjects(4, 6);
        assert!(stratified_kfold(&subs, 5, 1).is_err());
    }

    #[test]
    fn deterministic_under_seed() {
        let subs = subjects(10, 8);
        let a = stratified_kfold(&subs, 5, 42).unwrap();
        let b = stratified_kfold(&subs, 5, 42).unwrap();
        assert_eq!(a, b);
        let c = stratified_kfold(&subs, 5, 43).unwrap();
        assert_ne!(a, c); // overwhelmingly likely
    }
}
