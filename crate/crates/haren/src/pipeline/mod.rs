//! Training loop, evaluation, cross-validation, and report generation.

mod crossval;
mod metrics;
mod report;

pub use crossval::{
    run_generalization, run_upper_bound, stratified_kfold, CrossvalOutcome, MeanSd, MetricsReport,
    UpperBoundOutcome,
};
pub use metrics::{
    aggregate_subject, compute_metrics, mean_sd, ClassMetrics, Confusion, EvalMetrics,
    MetricsSummary, SubjectOutcome,
};
pub use report::{write_confusion_csv, write_loss_history_csv, write_report_txt, write_roc_csv};

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, Precision, Tid};
use crate::ctc::{build_targets, ctc_loss_node, Codebook};
use crate::data::{crop_segment, read_feature_file, ClassLabel, LayerStack, Manifest, ManifestEntry, WeightedSampler};
use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::model::{forward, ModelParams};
use crate::objective::{focal_loss_node, LossConfig};
use crate::optim::{AdamConfig, AdamState};

/// One manifest entry with its feature payload resident in memory.
pub struct LoadedSegment {
    pub entry: ManifestEntry,
    pub stack: LayerStack,
    pub tok: Mat,
}

/// The whole corpus, preloaded. Segment order follows the manifest.
pub struct LoadedCorpus {
    pub segments: Vec<LoadedSegment>,
}

impl LoadedCorpus {
    /// Read every feature file named by the manifest. Relative paths are
    /// resolved against `root` (conventionally the manifest's directory).
    pub fn load(manifest: &Manifest, root: &Path) -> Result<Self> {
        let mut segments = Vec::with_capacity(manifest.entries.len());
        for e in &manifest.entries {
            let path = if e.path.is_absolute() {
                e.path.clone()
            } else {
                root.join(&e.path)
            };
            let (mut stack, tok) = read_feature_file(&path)?;
            stack.subject_id = e.subject_id.clone();
            stack.segment_id = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            segments.push(LoadedSegment {
                entry: e.clone(),
                stack,
                tok,
            });
        }
        Ok(LoadedCorpus { segments })
    }

    /// Distinct subjects in first-appearance order.
    pub fn subjects(&self) -> Vec<(String, ClassLabel)> {
        let mut out: Vec<(String, ClassLabel)> = Vec::new();
        for s in &self.segments {
            if !out.iter().any(|(id, _)| id == &s.entry.subject_id) {
                out.push((s.entry.subject_id.clone(), s.entry.label));
            }
        }
        out
    }

    /// Segment indices belonging to the given subjects.
    pub fn segments_of<'a>(&self, subjects: impl IntoIterator<Item = &'a String>) -> Vec<usize> {
        let wanted: Vec<&String> = subjects.into_iter().collect();
        self.segments
            .iter()
            .enumerate()
            .filter(|(_, s)| wanted.iter().any(|w| **w == s.entry.subject_id))
            .map(|(i, _)| i)
            .collect()
    }

    /// All frames of every segment's tokenization features, stacked.
    pub fn pooled_tok_features(&self, indices: &[usize]) -> Result<Mat> {
        if indices.is_empty() {
            return Err(Error::contract("no segments to pool features from"));
        }
        let dim = self.segments[indices[0]].tok.cols;
        let mut data = Vec::new();
        let mut rows = 0usize;
        for &i in indices {
            let tok = &self.segments[i].tok;
            if tok.cols != dim {
                return Err(Error::Shape {
                    op: "pooled_tok_features",
                    lhs: vec![rows, dim],
                    rhs: vec![tok.rows, tok.cols],
                });
            }
            data.extend_from_slice(&tok.data);
            rows += tok.rows;
        }
        Mat::new(rows, dim, data)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Random crop window, in frames, applied per draw during training.
    pub crop_frames: usize,
    /// Evaluate (via the epoch callback) every this many epochs.
    pub eval_every: usize,
    pub loss: LossConfig,
    pub adam: AdamConfig,
    pub precision: Precision,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 8,
            epochs: 30,
            seed: 7,
            crop_frames: 48,
            eval_every: 1,
            loss: LossConfig::default(),
            adam: AdamConfig::default(),
            precision: Precision::F64,
        }
    }
}

/// One recorded optimization step.
#[derive(Clone, Debug, serde::Serialize)]
pub struct LossRecord {
    pub epoch: usize,
    pub batch: u64,
    pub focal: f64,
    pub ctc: Option<f64>,
    pub combined: f64,
}

pub struct TrainOutcome {
    pub params: ModelParams,
    pub history: Vec<LossRecord>,
    /// Input/target pairs skipped because no CTC alignment exists.
    pub infeasible_ctc: usize,
}

/// Train on the given segment indices. The CTC branch is active only when
/// a codebook is supplied and the loss config gives it weight.
pub fn train(
    corpus: &LoadedCorpus,
    train_idx: &[usize],
    params: ModelParams,
    codebook: Option<&Codebook>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    train_with(corpus, train_idx, params, codebook, cfg, |_, _| Ok(()))
}

/// [`train`] with a per-epoch observer (used for dev-set model selection).
/// The callback runs after every `eval_every`-th epoch.
pub fn train_with<F>(
    corpus: &LoadedCorpus,
    train_idx: &[usize],
    mut params: ModelParams,
    codebook: Option<&Codebook>,
    cfg: &TrainConfig,
    mut on_epoch: F,
) -> Result<TrainOutcome>
where
    F: FnMut(usize, &ModelParams) -> Result<()>,
{
    if train_idx.is_empty() {
        return Err(Error::contract("training set is empty"));
    }
    cfg.loss.validate()?;
    if cfg.batch_size == 0 {
        return Err(Error::parameter("batch size must be >= 1"));
    }
    let labels: Vec<ClassLabel> = train_idx
        .iter()
        .map(|&i| corpus.segments[i].entry.label)
        .collect();
    let sampler = WeightedSampler::new(&labels)?;
    let use_ctc = codebook.is_some() && cfg.loss.ctc_weight > 0.0;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new(&params.set, cfg.adam);
    let mut history = Vec::new();
    let mut infeasible = 0usize;
    let mut batch_counter: u64 = 0;

    for epoch in 1..=cfg.epochs {
        let draws = sampler.draw_epoch(train_idx.len(), &mut rng);
        for chunk in draws.chunks(cfg.batch_size) {
            batch_counter += 1;
            let ctc_due = use_ctc && cfg.loss.ctc_active(batch_counter);

            let mut g = Graph::new(cfg.precision);
            let bound = params.set.bind(&mut g)?;
            let mut probs: Vec<Tid> = Vec::with_capacity(chunk.len());
            let mut batch_labels: Vec<u8> = Vec::with_capacity(chunk.len());
            let mut ctc_nodes: Vec<Tid> = Vec::new();

            for &pick in chunk {
                let seg = &corpus.segments[train_idx[pick]];
                let (stack, tok) = crop_segment(&seg.stack, &seg.tok, cfg.crop_frames, &mut rng)?;
                let out = forward(&mut g, &bound, &params, &stack, true, &mut rng)?;
                probs.push(out.probability);
                batch_labels.push(seg.entry.label.as_u8());
                if ctc_due {
                    let target = build_targets(&tok, codebook.unwrap(), seg.entry.label)?;
                    let input_len = g.shape(out.frame_logits)[0];
                    match target.with_input_length(input_len) {
                        Ok(t) => {
                            // Per-token normalization keeps the CTC term on
                            // the same scale as the focal term regardless of
                            // crop length.
                            let node = ctc_loss_node(&mut g, out.frame_logits, &t)?;
                            let norm = 1.0 / t.target_length().max(1) as f64;
                            ctc_nodes.push(g.scale(node, norm)?);
                        }
                        Err(Error::CtcInfeasible { .. }) => infeasible += 1,
                        Err(e) => return Err(e),
                    }
                }
            }

            let focal = focal_loss_node(&mut g, &probs, &batch_labels, &cfg.loss)?;
            let (total, ctc_value) = if !ctc_nodes.is_empty() {
                // Mean over the feasible members keeps the CTC magnitude
                // independent of batch size.
                let mut acc = ctc_nodes[0];
                for &n in &ctc_nodes[1..] {
                    acc = g.add(acc, n)?;
                }
                let mean = g.scale(acc, 1.0 / ctc_nodes.len() as f64)?;
                let weighted = g.scale(mean, cfg.loss.ctc_weight)?;
                (g.add(focal, weighted)?, Some(g.scalar(mean)))
            } else {
                (focal, None)
            };

            let loss_value = g.scalar(total);
            if !loss_value.is_finite() {
                return Err(Error::NonFinite(format!(
                    "loss at epoch {epoch} batch {batch_counter} (focal={}, ctc={:?})",
                    g.scalar(focal),
                    ctc_value
                )));
            }
            let grads = g.backward(total)?;
            let grad_buffers: Vec<Vec<f64>> = (0..params.set.len())
                .map(|i| grads.get(&g, bound.tid(i)))
                .collect();
            adam.step(&mut params.set, &grad_buffers)?;
            params.set.quantize(cfg.precision);

            history.push(LossRecord {
                epoch,
                batch: batch_counter,
                focal: g.scalar(focal),
                ctc: ctc_value,
                combined: loss_value,
            });
        }
        if epoch % cfg.eval_every == 0 {
            on_epoch(epoch, &params)?;
        }
    }

    Ok(TrainOutcome {
        params,
        history,
        infeasible_ctc: infeasible,
    })
}

/// Evaluate on whole (uncropped) segments, aggregating per subject.
pub fn evaluate(
    corpus: &LoadedCorpus,
    eval_idx: &[usize],
    params: &ModelParams,
    precision: Precision,
) -> Result<EvalMetrics> {
    if eval_idx.is_empty() {
        return Err(Error::contract("evaluation set is empty"));
    }
    let mut by_subject: BTreeMap<String, (ClassLabel, Vec<f64>)> = BTreeMap::new();
    for &i in eval_idx {
        let seg = &corpus.segments[i];
        let out = params.infer(&seg.stack, precision)?;
        by_subject
            .entry(seg.entry.subject_id.clone())
            .or_insert((seg.entry.label, Vec::new()))
            .1
            .push(out.probability);
    }
    let mut subjects = Vec::with_capacity(by_subject.len());
    let mut preds = Vec::with_capacity(by_subject.len());
    let mut labels = Vec::with_capacity(by_subject.len());
    for (subject_id, (label, probs)) in by_subject {
        let (probability, predicted) = aggregate_subject(&probs)?;
        preds.push(predicted);
        labels.push(label);
        subjects.push(SubjectOutcome {
            subject_id,
            label: label.as_u8(),
            probability,
            predicted: predicted.as_u8(),
        });
    }
    let summary = compute_metrics(&preds, &labels)?;
    Ok(EvalMetrics { summary, subjects })
}

/// Deterministic sub-seed derivation (splitmix64 over base ^ tag).
pub fn derive_seed(base: u64, tag: u64) -> u64 {
    let mut z = base ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
