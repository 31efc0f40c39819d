//! Run configuration: defaults, TOML file layer, and flag overrides.
//!
//! Precedence is defaults < config file < command-line flags. Unknown
//! keys in the file are rejected, and the effective configuration is
//! echoed into the output directory so a run can be replayed from it.

use std::path::{Path, PathBuf};

use crate::autograd::Precision;
use crate::data::SyntheticSpec;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::objective::LossConfig;
use crate::optim::AdamConfig;
use crate::pipeline::TrainConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    UpperBound,
    Generalization,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    /// The full model with both loss branches.
    None,
    /// Single designated layer with the feed-forward trunk and CTC branch.
    NoHaren,
    /// Full architecture, CTC weight forced to zero.
    NoCtc,
}

#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub batch_size: usize,
    pub epochs: usize,
    pub crop_frames: usize,
    pub eval_every: usize,
    pub scenario: ScenarioKind,
    pub folds: usize,
    pub ablation: Ablation,
    /// Layer used by the no-haren baseline; defaults to the middle layer.
    pub designated_layer: Option<usize>,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            batch_size: 8,
            epochs: 30,
            crop_frames: 48,
            eval_every: 1,
            scenario: ScenarioKind::UpperBound,
            folds: 5,
            ablation: Ablation::None,
            designated_layer: None,
        }
    }
}

#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimSection {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for OptimSection {
    fn default() -> Self {
        let a = AdamConfig::default();
        OptimSection {
            lr: a.lr,
            beta1: a.beta1,
            beta2: a.beta2,
            epsilon: a.epsilon,
            weight_decay: a.weight_decay,
        }
    }
}

impl OptimSection {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
            weight_decay: self.weight_decay,
        }
    }
}

#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSection {
    /// Per-centroid significance level.
    pub alpha: f64,
    pub bonferroni: bool,
    /// When positive, analyze a random sample of this many segments.
    pub sample_size: usize,
    pub sample_seed: u64,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        AnalysisSection {
            alpha: 0.05,
            bonferroni: false,
            sample_size: 0,
            sample_seed: 0,
        }
    }
}

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// 32 or 64.
    pub precision: u8,
    /// Output directory; flags and `HAREN_OUT` override.
    pub out: Option<PathBuf>,
    /// Corpus manifest consumed by train/eval/crossval/layer-sweep/analyze.
    pub manifest: Option<PathBuf>,
    /// Directory holding `codebook.hrnc` and `token_cache.jsonl`.
    pub labels: Option<PathBuf>,
    /// Trained parameters file consumed by `eval`.
    pub model_params: Option<PathBuf>,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub optim: OptimSection,
    pub train: TrainSection,
    pub synth: SyntheticSpec,
    pub analysis: AnalysisSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 7,
            precision: 64,
            out: None,
            manifest: None,
            labels: None,
            model_params: None,
            model: ModelConfig::default(),
            loss: LossConfig::default(),
            optim: OptimSection::default(),
            train: TrainSection::default(),
            synth: SyntheticSpec::default(),
            analysis: AnalysisSection::default(),
        }
    }
}

impl RunConfig {
    /// Defaults overlaid with a TOML file, if given. Unknown keys fail.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let cfg = match path {
            None => RunConfig::default(),
            Some(p) => {
                let text = std::fs::read_to_string(p)?;
                toml::from_str(&text)
                    .map_err(|e| Error::config(format!("{}: {e}", p.display())))?
            }
        };
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.precision != 32 && self.precision != 64 {
            return Err(Error::config(format!(
                "precision must be 32 or 64, got {}",
                self.precision
            )));
        }
        self.model.validate()?;
        self.loss.validate()?;
        if self.train.batch_size == 0 || self.train.epochs == 0 {
            return Err(Error::config("batch_size and epochs must be >= 1"));
        }
        if self.train.folds < 2 {
            return Err(Error::config("folds must be >= 2"));
        }
        if let Some(layer) = self.train.designated_layer {
            if layer >= self.model.layers {
                return Err(Error::config(format!(
                    "designated_layer {layer} out of range for {} layers",
                    self.model.layers
                )));
            }
        }
        if !(self.analysis.alpha > 0.0 && self.analysis.alpha < 1.0) {
            return Err(Error::config("analysis.alpha must be in (0, 1)"));
        }
        Ok(())
    }

    pub fn precision_mode(&self) -> Precision {
        if self.precision == 32 {
            Precision::F32
        } else {
            Precision::F64
        }
    }

    /// The middle layer by default, matching what a fixed-layer baseline
    /// would pick absent a sweep.
    pub fn designated_layer(&self) -> usize {
        self.train.designated_layer.unwrap_or(self.model.layers / 2)
    }

    pub fn train_config(&self) -> TrainConfig {
        let mut loss = self.loss;
        if self.train.ablation == Ablation::NoCtc {
            loss.ctc_weight = 0.0;
        }
        TrainConfig {
            batch_size: self.train.batch_size,
            epochs: self.train.epochs,
            seed: self.seed,
            crop_frames: self.train.crop_frames,
            eval_every: self.train.eval_every,
            loss,
            adam: self.optim.adam(),
            precision: self.precision_mode(),
        }
    }

    /// Serialize the effective configuration into `dir/config.toml`.
    pub fn echo_to(&self, dir: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self)
            .map_err(|e| Error::config(format!("serialize config: {e}")))?;
        std::fs::write(dir.join("config.toml"), text)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    #![allow(clippy::field_reassign_with_default)]
    use super::*;

    #[test]
    fn defaults_validate() {
        assert!(RunConfig::default().validate().is_ok());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "seed = 3\nnot_a_key = 1\n").unwrap();
        let err = RunConfig::load(Some(&p)).unwrap_err().to_string();
        assert!(err.contains("not_a_key") || err.contains("unknown"), "{err}");

        std::fs::write(&p, "[model]\nlayers = 6\nbogus = true\n").unwrap();
        assert!(RunConfig::load(Some(&p)).is_err());
    }

    #[test]
    fn file_overrides_defaults_fieldwise() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "seed = 99\n[model]\nlayers = 6\n").unwrap();
        let cfg = RunConfig::load(Some(&p)).unwrap();
        assert_eq!(cfg.seed, 99);
        assert_eq!(cfg.model.layers, 6);
        // Untouched fields keep their defaults.
        assert_eq!(cfg.model.dim, ModelConfig::default().dim);
        assert_eq!(cfg.train.batch_size, 8);
    }

    #[test]
    fn echo_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = RunConfig::default();
        cfg.seed = 1234;
        cfg.train.ablation = Ablation::NoCtc;
        cfg.echo_to(dir.path()).unwrap();
        let back = RunConfig::load(Some(&dir.path().join("config.toml"))).unwrap();
        assert_eq!(back.seed, 1234);
        assert_eq!(back.train.ablation, Ablation::NoCtc);
        // Echo of the echo is byte-identical.
        let d2 = tempfile::tempdir().unwrap();
        back.echo_to(d2.path()).unwrap();
        assert_eq!(
            std::fs::read(dir.path().join("config.toml")).unwrap(),
            std::fs::read(d2.path().join("config.toml")).unwrap()
        );
    }

    #[test]
    fn invalid_precision_rejected() {
        let mut cfg = RunConfig::default();
        cfg.precision = 16;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn no_ctc_ablation_zeroes_the_weight() {
        let mut cfg = RunConfig::default();
        cfg.train.ablation = Ablation::NoCtc;
        assert_eq!(cfg.train_config().loss.ctc_weight, 0.0);
        cfg.train.ablation = Ablation::None;
        assert!(cfg.train_config().loss.ctc_weight > 0.0);
    }
}
