//! Command entry points shared by the `haren` binary and the examples.
//! Every command writes machine-readable artifacts under a fixed file
//! layout in its output directory and echoes the effective configuration.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::analysis::{significance_report, usage_stats, write_report_csv, SignificanceRow};
use crate::config::{Ablation, RunConfig, ScenarioKind};
use crate::ctc::{build_targets, kmeans_fit, tokenize, Codebook};
use crate::data::{generate_synthetic, ClassLabel, Manifest};
use crate::error::{Error, Result};
use crate::gradcheck::{check_full_model, CheckRow};
use crate::model::{ModelParams, ModelVariant};
use crate::pipeline::{
    derive_seed, evaluate, run_generalization, run_upper_bound, stratified_kfold,
    write_confusion_csv, write_loss_history_csv, write_report_txt, write_roc_csv, EvalMetrics,
    LoadedCorpus, LossRecord, MetricsReport,
};

pub const CODEBOOK_FILE: &str = "codebook.hrnc";
pub const TOKEN_CACHE_FILE: &str = "token_cache.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const REPORT_FILE: &str = "report.txt";
pub const LOSS_HISTORY_FILE: &str = "loss_history.csv";
pub const CONFUSION_FILE: &str = "confusion.csv";
pub const ROC_FILE: &str = "roc.csv";
pub const MODEL_FILE: &str = "model.hrnp";
pub const LAYER_SWEEP_FILE: &str = "layer_sweep.csv";
pub const ANALYSIS_FILE: &str = "analysis.csv";
pub const ANALYSIS_SUMMARY_FILE: &str = "analysis_summary.json";

fn ensure_out(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    Ok(())
}

fn manifest_path(cfg: &RunConfig) -> Result<PathBuf> {
    cfg.manifest
        .clone()
        .ok_or_else(|| Error::config("no manifest configured (set `manifest` or --manifest)"))
}

fn load_corpus(cfg: &RunConfig) -> Result<(LoadedCorpus, PathBuf)> {
    let path = manifest_path(cfg)?;
    let manifest = Manifest::read_from(&path)?;
    if manifest.entries.is_empty() {
        return Err(Error::config(format!("empty manifest {}", path.display())));
    }
    let root = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    Ok((LoadedCorpus::load(&manifest, &root)?, path))
}

fn load_codebook(cfg: &RunConfig) -> Result<Option<Codebook>> {
    match &cfg.labels {
        None => Ok(None),
        Some(dir) => Ok(Some(Codebook::read_from(&dir.join(CODEBOOK_FILE))?)),
    }
}

fn variant_for(cfg: &RunConfig) -> ModelVariant {
    match cfg.train.ablation {
        Ablation::NoHaren => ModelVariant::SingleLayer {
            layer: cfg.designated_layer(),
        },
        _ => ModelVariant::Full,
    }
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::data(format!("serialize {}: {e}", path.display())))?;
    std::fs::write(path, text)?;
    Ok(())
}

/// `synth`: generate the synthetic corpus. Returns the manifest path.
pub fn run_synth(cfg: &RunConfig, out: &Path) -> Result<PathBuf> {
    ensure_out(out)?;
    let corpus = generate_synthetic(&cfg.synth, out)?;
    cfg.echo_to(out)?;
    Ok(corpus.manifest_path)
}

/// One token-cache record (JSON lines; the first line is a header).
#[derive(serde::Serialize, serde::Deserialize)]
pub struct TokenCacheRecord {
    pub subject_id: String,
    pub path: String,
    pub label: u8,
    pub frames: usize,
    /// Raw nearest-centroid indices, one per frame.
    pub raw: Vec<usize>,
    /// Class-shifted, collapsed CTC target.
    pub target: Vec<usize>,
}

#[derive(serde::Serialize, serde::Deserialize)]
pub struct TokenCacheHeader {
    pub k: usize,
    pub vocab: usize,
    pub fit_segments: usize,
}

pub struct GenLabelsOutcome {
    pub codebook: Codebook,
    pub records: usize,
}

/// `gen-labels`: fit the codebook on training-split frames (or on the
/// whole corpus when no split tags exist) and cache per-segment tokens.
pub fn run_gen_labels(cfg: &RunConfig, out: &Path) -> Result<GenLabelsOutcome> {
    ensure_out(out)?;
    let (corpus, _) = load_corpus(cfg)?;
    let tagged: Vec<usize> = corpus
        .segments
        .iter()
        .enumerate()
        .filter(|(_, s)| s.entry.split.as_deref() == Some("train"))
        .map(|(i, _)| i)
        .collect();
    let fit_idx: Vec<usize> = if tagged.is_empty() {
        (0..corpus.segments.len()).collect()
    } else {
        tagged
    };
    let features = corpus.pooled_tok_features(&fit_idx)?;
    let codebook = kmeans_fit(
        &features,
        cfg.model.centroids,
        derive_seed(cfg.seed, 0xC0DE),
        100,
    )?;
    codebook.write_to(&out.join(CODEBOOK_FILE))?;

    let mut cache = std::fs::File::create(out.join(TOKEN_CACHE_FILE))?;
    let header = TokenCacheHeader {
        k: codebook.k,
        vocab: crate::ctc::vocab_size(codebook.k),
        fit_segments: fit_idx.len(),
    };
    writeln!(cache, "{}", serde_json::to_string(&header).unwrap())?;
    let mut records = 0usize;
    for seg in &corpus.segments {
        let raw = tokenize(&seg.tok, &codebook)?;
        let target = build_targets(&seg.tok, &codebook, seg.entry.label)?;
        let record = TokenCacheRecord {
            subject_id: seg.entry.subject_id.clone(),
            path: seg.entry.path.display().to_string(),
            label: seg.entry.label.as_u8(),
            frames: seg.tok.rows,
            raw,
            target: target.tokens().to_vec(),
        };
        writeln!(cache, "{}", serde_json::to_string(&record).unwrap())?;
        records += 1;
    }
    cfg.echo_to(out)?;
    Ok(GenLabelsOutcome { codebook, records })
}

pub fn read_token_cache(path: &Path) -> Result<(TokenCacheHeader, Vec<TokenCacheRecord>)> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header: TokenCacheHeader = match lines.next() {
        Some(l) => serde_json::from_str(l)
            .map_err(|e| Error::data(format!("{}: bad cache header: {e}", path.display())))?,
        None => return Err(Error::data(format!("{}: empty token cache", path.display()))),
    };
    let mut records = Vec::new();
    for (i, l) in lines.enumerate() {
        if l.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(l).map_err(|e| {
            Error::data(format!("{}:{}: bad cache record: {e}", path.display(), i + 2))
        })?);
    }
    Ok((header, records))
}

fn write_scenario_outputs(
    out: &Path,
    report: &MetricsReport,
    histories: &[Vec<LossRecord>],
) -> Result<()> {
    write_json(&out.join(SUMMARY_FILE), report)?;
    let mut txt = Vec::new();
    write_report_txt(report, &mut txt)?;
    std::fs::write(out.join(REPORT_FILE), txt)?;
    let mut conf = Vec::new();
    write_confusion_csv(report, &mut conf)?;
    std::fs::write(out.join(CONFUSION_FILE), conf)?;
    let mut roc = Vec::new();
    write_roc_csv(report, &mut roc)?;
    std::fs::write(out.join(ROC_FILE), roc)?;
    if !histories.is_empty() {
        let mut hist = Vec::new();
        write_loss_history_csv(histories, &mut hist)?;
        std::fs::write(out.join(LOSS_HISTORY_FILE), hist)?;
    }
    Ok(())
}

/// `train`: run the configured scenario; in upper-bound mode the best-dev
/// parameters are saved alongside the reports.
pub fn run_train(cfg: &RunConfig, out: &Path) -> Result<MetricsReport> {
    ensure_out(out)?;
    cfg.validate()?;
    let (corpus, _) = load_corpus(cfg)?;
    let codebook = load_codebook(cfg)?;
    let variant = variant_for(cfg);
    let train_cfg = cfg.train_config();
    if train_cfg.loss.ctc_weight > 0.0 && codebook.is_none() {
        return Err(Error::config(
            "the CTC branch needs generated labels (run gen-labels and pass --labels), or use --ablation no-ctc",
        ));
    }
    let report = match cfg.train.scenario {
        ScenarioKind::UpperBound => {
            let outcome =
                run_upper_bound(&corpus, &cfg.model, variant, codebook.as_ref(), &train_cfg)?;
            outcome.params.save(&out.join(MODEL_FILE))?;
            write_scenario_outputs(out, &outcome.report, &[outcome.history])?;
            outcome.report
        }
        ScenarioKind::Generalization => {
            let outcome = run_generalization(
                &corpus,
                &cfg.model,
                variant,
                codebook.as_ref(),
                &train_cfg,
                cfg.train.folds,
            )?;
            write_scenario_outputs(out, &outcome.report, &outcome.histories)?;
            outcome.report
        }
    };
    cfg.echo_to(out)?;
    Ok(report)
}

/// `crossval`: the generalization scenario regardless of the configured
/// default.
pub fn run_crossval(cfg: &RunConfig, out: &Path) -> Result<MetricsReport> {
    let mut cfg = cfg.clone();
    cfg.train.scenario = ScenarioKind::Generalization;
    run_train(&cfg, out)
}

/// `eval`: load saved parameters and score a split (the `dev` split when
/// tags exist, the whole manifest otherwise).
pub fn run_eval(cfg: &RunConfig, out: &Path) -> Result<MetricsReport> {
    ensure_out(out)?;
    let params_path = cfg
        .model_params
        .clone()
        .ok_or_else(|| Error::config("eval needs --model-params pointing at a saved model"))?;
    let params = ModelParams::load(&params_path)?;
    let (corpus, _) = load_corpus(cfg)?;
    let dev: Vec<usize> = corpus
        .segments
        .iter()
        .enumerate()
        .filter(|(_, s)| s.entry.split.as_deref() == Some("dev"))
        .map(|(i, _)| i)
        .collect();
    let idx: Vec<usize> = if dev.is_empty() {
        (0..corpus.segments.len()).collect()
    } else {
        dev
    };
    let metrics = evaluate(&corpus, &idx, &params, cfg.precision_mode())?;
    let report = MetricsReport {
        scenario: "eval".to_string(),
        macro_f1: crate::pipeline::MeanSd {
            mean: metrics.summary.macro_f1,
            sd: 0.0,
        },
        macro_recall: crate::pipeline::MeanSd {
            mean: metrics.summary.macro_recall,
            sd: 0.0,
        },
        macro_precision: crate::pipeline::MeanSd {
            mean: metrics.summary.macro_precision,
            sd: 0.0,
        },
        folds: vec![metrics],
        best_epoch: None,
        infeasible_ctc: 0,
    };
    write_scenario_outputs(out, &report, &[])?;
    cfg.echo_to(out)?;
    Ok(report)
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct LayerSweepRow {
    pub layer: usize,
    pub macro_f1: f64,
    pub macro_recall: f64,
    pub macro_precision: f64,
}

/// `layer-sweep`: train the single-layer baseline once per layer on a
/// fixed stratified split and tabulate held-out metrics per layer.
pub fn run_layer_sweep(cfg: &RunConfig, out: &Path) -> Result<Vec<LayerSweepRow>> {
    ensure_out(out)?;
    cfg.validate()?;
    let (corpus, _) = load_corpus(cfg)?;
    let codebook = load_codebook(cfg)?;
    let train_cfg = cfg.train_config();
    if train_cfg.loss.ctc_weight > 0.0 && codebook.is_none() {
        return Err(Error::config(
            "layer-sweep trains the CTC-supervised baseline; pass --labels or set ctc_weight 0",
        ));
    }
    // One fixed split shared by every layer.
    let subjects = corpus.subjects();
    let assignment = stratified_kfold(&subjects, cfg.train.folds, derive_seed(cfg.seed, 0xF01D))?;
    let held_out: Vec<String> = subjects
        .iter()
        .zip(&assignment)
        .filter(|(_, &a)| a == 0)
        .map(|((id, _), _)| id.clone())
        .collect();
    let train_subjects: Vec<String> = subjects
        .iter()
        .zip(&assignment)
        .filter(|(_, &a)| a != 0)
        .map(|((id, _), _)| id.clone())
        .collect();
    let train_idx = corpus.segments_of(train_subjects.iter());
    let eval_idx = corpus.segments_of(held_out.iter());

    let mut rows = Vec::with_capacity(cfg.model.layers);
    for layer in 0..cfg.model.layers {
        let params = crate::model::init_params(
            &cfg.model,
            ModelVariant::SingleLayer { layer },
            derive_seed(cfg.seed, 0x5EED ^ layer as u64),
        )?;
        let outcome = crate::pipeline::train(
            &corpus,
            &train_idx,
            params,
            codebook.as_ref(),
            &train_cfg,
        )?;
        let metrics = evaluate(&corpus, &eval_idx, &outcome.params, train_cfg.precision)?;
        rows.push(LayerSweepRow {
            layer,
            macro_f1: metrics.summary.macro_f1,
            macro_recall: metrics.summary.macro_recall,
            macro_precision: metrics.summary.macro_precision,
        });
    }
    let mut csv = String::from("layer,macro_f1,macro_recall,macro_precision\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            r.layer, r.macro_f1, r.macro_recall, r.macro_precision
        ));
    }
    std::fs::write(out.join(LAYER_SWEEP_FILE), csv)?;
    write_json(&out.join(SUMMARY_FILE), &rows)?;
    cfg.echo_to(out)?;
    Ok(rows)
}

#[derive(serde::Serialize)]
pub struct AnalysisSummary {
    pub k: usize,
    pub alpha: f64,
    pub bonferroni: bool,
    pub segments_analyzed: usize,
    pub significant_centroids: Vec<usize>,
    pub rows: Vec<SignificanceRow>,
}

/// `analyze`: centroid-usage statistics over the token cache, grouped by
/// class, with per-centroid chi-square significance flags.
pub fn run_analyze(cfg: &RunConfig, out: &Path) -> Result<AnalysisSummary> {
    ensure_out(out)?;
    let labels_dir = cfg
        .labels
        .clone()
        .ok_or_else(|| Error::config("analyze needs --labels with a token cache"))?;
    let (header, mut records) = read_token_cache(&labels_dir.join(TOKEN_CACHE_FILE))?;
    if cfg.analysis.sample_size > 0 && cfg.analysis.sample_size < records.len() {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.analysis.sample_seed);
        records.shuffle(&mut rng);
        records.truncate(cfg.analysis.sample_size);
    }
    let mut control = Vec::new();
    let mut depressed = Vec::new();
    for r in &records {
        match ClassLabel::from_u8(r.label)? {
            ClassLabel::Control => control.extend_from_slice(&r.raw),
            ClassLabel::Depressed => depressed.extend_from_slice(&r.raw),
        }
    }
    if control.is_empty() || depressed.is_empty() {
        return Err(Error::contract(
            "analysis requires frames from both classes in the token cache",
        ));
    }
    let usage = usage_stats(&control, &depressed, header.k)?;
    let rows = significance_report(&usage, cfg.analysis.alpha, cfg.analysis.bonferroni);
    let mut csv = Vec::new();
    write_report_csv(&rows, &mut csv)?;
    std::fs::write(out.join(ANALYSIS_FILE), csv)?;
    let summary = AnalysisSummary {
        k: header.k,
        alpha: cfg.analysis.alpha,
        bonferroni: cfg.analysis.bonferroni,
        segments_analyzed: records.len(),
        significant_centroids: rows
            .iter()
            .filter(|r| r.significant)
            .map(|r| r.centroid)
            .collect(),
        rows,
    };
    write_json(&out.join(ANALYSIS_SUMMARY_FILE), &summary)?;
    cfg.echo_to(out)?;
    Ok(summary)
}

/// `gradcheck`: finite-difference suites at toy dims. Returns the rows;
/// callers decide how to render them.
pub fn run_gradcheck(cfg: &RunConfig) -> Result<Vec<CheckRow>> {
    let toy = crate::model::ModelConfig {
        layers: 3,
        dim: 8,
        heads: 2,
        ffn_dim: 16,
        centroids: cfg.model.centroids.clamp(2, 5),
        ..cfg.model
    };
    check_full_model(&toy, ModelVariant::Full, 6, derive_seed(cfg.seed, 0x6AD))
}

/// Evaluation metrics for a designated split of a manifest; used by the
/// examples for quick scoring.
pub fn eval_on_all(cfg: &RunConfig, params: &ModelParams) -> Result<EvalMetrics> {
    let (corpus, _) = load_corpus(cfg)?;
    let idx: Vec<usize> = (0..corpus.segments.len()).collect();
    evaluate(&corpus, &idx, params, cfg.precision_mode())
}
