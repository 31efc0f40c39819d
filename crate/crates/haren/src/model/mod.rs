//! The network: a trainable soft assignment of encoder layers into shallow
//! and deep subspaces, multi-head cross-attention fusing the two, a
//! bottleneck feed-forward block, and the two task heads (utterance-level
//! classification, frame-level CTC logits).

mod forward;

pub use forward::{cluster_subspaces, cross_modal_fuse, forward, ForwardOutput};

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, ParamSet, Precision};
use crate::ctc::vocab_size;
use crate::data::LayerStack;
use crate::error::{Error, Result};
use crate::mat::Mat;

#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Number of encoder layers consumed (m).
    pub layers: usize,
    /// Feature dim (d).
    pub dim: usize,
    /// Attention heads; must divide `dim`.
    pub heads: usize,
    /// Bottleneck width of the feed-forward block.
    pub ffn_dim: usize,
    /// Dropout rate inside the feed-forward block.
    pub dropout: f64,
    /// Exponential decay factor for the assignment initialization.
    pub decay_alpha: f64,
    /// K-means centroid count; the CTC vocabulary is `2k + 1`.
    pub centroids: usize,
    /// Optional temporal pooling stride before the CTC head (1 = none).
    pub pool_stride: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        // Desk-scale defaults; paper-scale dims (24 layers, d=1024, 8
        // heads) remain reachable through configuration.
        ModelConfig {
            layers: 4,
            dim: 32,
            heads: 4,
            ffn_dim: 64,
            dropout: 0.3,
            decay_alpha: 0.95,
            centroids: 5,
            pool_stride: 1,
        }
    }
}

impl ModelConfig {
    pub fn vocab(&self) -> usize {
        vocab_size(self.centroids)
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers < 2 {
            return Err(Error::parameter("model needs at least 2 layers"));
        }
        if self.dim < 2 {
            return Err(Error::parameter("feature dim must be >= 2"));
        }
        if self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return Err(Error::config(format!(
                "feature dim {} is not divisible by {} heads",
                self.dim, self.heads
            )));
        }
        if self.ffn_dim == 0 {
            return Err(Error::parameter("ffn_dim must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::parameter("dropout must be in [0, 1)"));
        }
        if !(self.decay_alpha > 0.0 && self.decay_alpha < 1.0) {
            return Err(Error::parameter(format!(
                "decay alpha must be in (0, 1), got {}",
                self.decay_alpha
            )));
        }
        if self.centroids == 0 {
            return Err(Error::parameter("centroid count must be >= 1"));
        }
        if self.pool_stride == 0 {
            return Err(Error::parameter("pool stride must be >= 1"));
        }
        Ok(())
    }
}

/// Architecture selector: the full hierarchical model, or the single-layer
/// baseline (no layer clustering, no cross-attention) used for ablations
/// and layer sweeps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModelVariant {
    Full,
    SingleLayer { layer: usize },
}

/// All trainable tensors plus the configuration they were built for.
#[derive(Clone, Debug)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub variant: ModelVariant,
    pub set: ParamSet,
}

/// Initialization logits for the layer-assignment matrix: row l (1-based)
/// is `(log(p/(1-p)), -log(p/(1-p)))` with `p = alpha^l`, tilting early
/// layers toward the shallow column and late layers toward the deep one.
pub fn init_assignment_logits(m: usize, alpha: f64) -> Result<Vec<f64>> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::parameter(format!(
            "decay alpha must be in (0, 1), got {alpha}"
        )));
    }
    if m < 2 {
        return Err(Error::parameter("assignment matrix needs at least 2 layers"));
    }
    let mut logits = Vec::with_capacity(2 * m);
    for l in 1..=m {
        let p = alpha.powi(l as i32);
        let logit = (p / (1.0 - p)).ln();
        logits.push(logit);
        logits.push(-logit);
    }
    Ok(logits)
}

/// Row-softmax view of an assignment-logit matrix.
pub fn assignment_probs(logits: &Mat) -> Mat {
    let data = crate::autograd::kernels::softmax_rows(&logits.data, logits.rows, logits.cols);
    Mat {
        rows: logits.rows,
        cols: logits.cols,
        data,
    }
}

fn xavier<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Vec<f64> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    (0..rows * cols).map(|_| rng.gen_range(-limit..limit)).collect()
}

/// Build a fresh parameter set for the given architecture.
pub fn init_params(config: &ModelConfig, variant: ModelVariant, seed: u64) -> Result<ModelParams> {
    config.validate()?;
    if let ModelVariant::SingleLayer { layer } = variant {
        if layer >= config.layers {
            return Err(Error::parameter(format!(
                "designated layer {layer} out of range for {} layers",
                config.layers
            )));
        }
    }
    let d = config.dim;
    let v = config.vocab();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut set = ParamSet::new();

    if variant == ModelVariant::Full {
        set.add(
            "hac.logits",
            vec![config.layers, 2],
            init_assignment_logits(config.layers, config.decay_alpha)?,
        );
        for name in ["cmf.w_q", "cmf.w_k", "cmf.w_v", "cmf.w_o"] {
            let w = xavier(&mut rng, d, d);
            set.add(name, vec![d, d], w);
        }
    }
    set.add("cmf.norm_gain", vec![d], vec![1.0; d]);
    set.add("cmf.norm_bias", vec![d], vec![0.0; d]);
    let w1 = xavier(&mut rng, d, config.ffn_dim);
    set.add("cmf.ffn_w1", vec![d, config.ffn_dim], w1);
    set.add("cmf.ffn_b1", vec![config.ffn_dim], vec![0.0; config.ffn_dim]);
    let w2 = xavier(&mut rng, config.ffn_dim, d);
    set.add("cmf.ffn_w2", vec![config.ffn_dim, d], w2);
    set.add("cmf.ffn_b2", vec![d], vec![0.0; d]);
    let cls = xavier(&mut rng, d, 1);
    set.add("head.cls_w", vec![d, 1], cls);
    set.add("head.cls_b", vec![1], vec![0.0]);
    let ctc = xavier(&mut rng, d, v);
    set.add("head.ctc_w", vec![d, v], ctc);
    set.add("head.ctc_b", vec![v], vec![0.0; v]);

    Ok(ModelParams {
        config: *config,
        variant,
        set,
    })
}

impl ModelParams {
    /// Check that a stack is compatible with this model.
    pub fn check_stack(&self, stack: &LayerStack) -> Result<()> {
        if stack.dim() != self.config.dim {
            return Err(Error::Shape {
                op: "forward",
                lhs: vec![self.config.layers, self.config.dim],
                rhs: vec![stack.layer_count(), stack.dim()],
            });
        }
        match self.variant {
            ModelVariant::Full => {
                if stack.layer_count() != self.config.layers {
                    return Err(Error::Shape {
                        op: "forward",
                        lhs: vec![self.config.layers, self.config.dim],
                        rhs: vec![stack.layer_count(), stack.dim()],
                    });
                }
            }
            ModelVariant::SingleLayer { layer } => {
                if layer >= stack.layer_count() {
                    return Err(Error::parameter(format!(
                        "designated layer {layer} out of range for stack with {} layers",
                        stack.layer_count()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Eval-mode forward pass returning concrete values.
    pub fn infer(&self, stack: &LayerStack, precision: Precision) -> Result<InferenceOutput> {
        let mut g = Graph::new(precision);
        let bound = self.set.bind(&mut g)?;
        // Dropout is inert in eval mode; the RNG is never consulted.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = forward(&mut g, &bound, self, stack, false, &mut rng)?;
        let fl_shape = g.shape(out.frame_logits).to_vec();
        Ok(InferenceOutput {
            probability: g.scalar(out.probability),
            frame_logits: Mat::new(
                fl_shape[0],
                fl_shape[1],
                g.values(out.frame_logits).to_vec(),
            )?,
            fused: Mat::new(
                stack.frames(),
                self.config.dim,
                g.values(out.fused).to_vec(),
            )?,
        })
    }
}

/// Concrete model outputs for one segment.
#[derive(Clone, Debug)]
pub struct InferenceOutput {
    /// Probability of the depressed class, in (0, 1).
    pub probability: f64,
    /// Unnormalized per-frame CTC scores, T' x (2k+1).
    pub frame_logits: Mat,
    /// Fused sequence representation, T x d.
    pub fused: Mat,
}

const PARAMS_MAGIC: &[u8; 4] = b"HRNP";
const PARAMS_VERSION: u32 = 1;

#[derive(serde::Serialize, serde::Deserialize)]
struct ParamsHeader {
    config: ModelConfig,
    variant: ModelVariant,
}

impl ModelParams {
    /// Persist config, variant and every tensor (f64, little-endian).
    pub fn save(&self, path: &Path) -> Result<()> {
        let header = serde_json::to_vec(&ParamsHeader {
            config: self.config,
            variant: self.variant,
        })
        .map_err(|e| Error::data(format!("encode params header: {e}")))?;
        let mut buf = Vec::new();
        buf.extend_from_slice(PARAMS_MAGIC);
        buf.extend_from_slice(&PARAMS_VERSION.to_le_bytes());
        buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
        buf.extend_from_slice(&header);
        buf.extend_from_slice(&(self.set.len() as u32).to_le_bytes());
        for p in self.set.iter() {
            let name = p.name.as_bytes();
            buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
            buf.extend_from_slice(name);
            buf.extend_from_slice(&(p.shape.len() as u32).to_le_bytes());
            for &s in &p.shape {
                buf.extend_from_slice(&(s as u32).to_le_bytes());
            }
            for v in &p.values {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        std::fs::File::create(path)?.write_all(&buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let fail = |offset: usize, message: String| Error::Format {
            path: path.to_path_buf(),
            offset: offset as u64,
            message,
        };
        let mut off = 0usize;
        let mut take = |n: usize, what: &str| -> Result<&[u8]> {
            if off + n > bytes.len() {
                return Err(fail(bytes.len(), format!("truncated while reading {what}")));
            }
            let s = &bytes[off..off + n];
            off += n;
            Ok(s)
        };
        if take(4, "magic")? != PARAMS_MAGIC {
            return Err(fail(0, "bad magic".into()));
        }
        let version = u32::from_le_bytes(take(4, "version")?.try_into().unwrap());
        if version != PARAMS_VERSION {
            return Err(fail(4, format!("unsupported version {version}")));
        }
        let hlen = u32::from_le_bytes(take(4, "header length")?.try_into().unwrap()) as usize;
        let header: ParamsHeader = serde_json::from_slice(take(hlen, "header")?)
            .map_err(|e| fail(12, format!("bad params header: {e}")))?;
        let count = u32::from_le_bytes(take(4, "param count")?.try_into().unwrap()) as usize;
        let mut set = ParamSet::new();
        for _ in 0..count {
            let nlen = u32::from_le_bytes(take(4, "name length")?.try_into().unwrap()) as usize;
            let name = String::from_utf8(take(nlen, "name")?.to_vec())
                .map_err(|_| fail(0, "non-utf8 parameter name".into()))?;
            let ndim = u32::from_le_bytes(take(4, "ndim")?.try_into().unwrap()) as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(u32::from_le_bytes(take(4, "dim")?.try_into().unwrap()) as usize);
            }
            let n: usize = shape.iter().product();
            let raw = take(8 * n, "values")?;
            let values: Vec<f64> = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            set.add(name, shape, values);
        }
        Ok(ModelParams {
            config: header.config,
            variant: header.variant,
            set,
        })
    }
}
