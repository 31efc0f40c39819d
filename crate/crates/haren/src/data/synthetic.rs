//! Seeded synthetic corpus generator.
//!
//! Control subjects are pure i.i.d. standard normal noise in every layer.
//! Depressed subjects get the same noise process plus a mean shift of
//! `marker_strength` on a fixed dim subset, applied to a sparse random
//! fraction of frames ("marker frames"), injected into the shallow third
//! and/or the deep third of the layer stack. The tokenization features
//! receive their own shift on the same frames so K-means tokens carry the
//! class signal. Marker frames are sparse and unaligned across segments.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::index::sample as index_sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::feature_file::{write_feature_file, LayerStack};
use super::manifest::{Manifest, ManifestEntry};
use super::ClassLabel;
use crate::error::{Error, Result};
use crate::mat::Mat;

/// Which layer group carries the depressive markers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MarkerPlacement {
    /// One dim subset into the shallow third, a different subset into the
    /// deep third (the default; middle layers carry no signal).
    ShallowDeep,
    ShallowOnly,
    DeepOnly,
}

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub control_subjects: usize,
    pub depressed_subjects: usize,
    pub segments_per_subject: usize,
    pub frames: usize,
    pub layers: usize,
    pub dim: usize,
    pub tok_dim: usize,
    pub frame_rate: f64,
    /// Fraction of frames carrying the depressive cue, in (0, 1).
    pub marker_density: f64,
    /// Mean shift applied on marker frames; zero yields a null corpus.
    pub marker_strength: f64,
    pub placement: MarkerPlacement,
    /// When positive, the last `dev_fraction` of each class's subjects are
    /// tagged `dev` and the rest `train`.
    pub dev_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            control_subjects: 16,
            depressed_subjects: 16,
            segments_per_subject: 3,
            frames: 64,
            layers: 4,
            dim: 32,
            tok_dim: 8,
            frame_rate: 50.0,
            marker_density: 0.1,
            marker_strength: 3.0,
            placement: MarkerPlacement::ShallowDeep,
            dev_fraction: 0.0,
            seed: 7,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.marker_density > 0.0 && self.marker_density < 1.0) {
            return Err(Error::parameter(format!(
                "marker density must be in (0, 1), got {}",
                self.marker_density
            )));
        }
        if self.marker_strength < 0.0 || !self.marker_strength.is_finite() {
            return Err(Error::parameter(format!(
                "marker strength must be >= 0, got {}",
                self.marker_strength
            )));
        }
        if self.control_subjects == 0 || self.depressed_subjects == 0 {
            return Err(Error::parameter("both classes need at least one subject"));
        }
        if self.segments_per_subject == 0 {
            return Err(Error::parameter("segments_per_subject must be >= 1"));
        }
        if self.layers < 2 {
            return Err(Error::parameter("layer count must be >= 2"));
        }
        if self.frames == 0 || self.dim < 2 || self.tok_dim == 0 {
            return Err(Error::parameter("frames, dim >= 2, and tok_dim must be positive"));
        }
        if !(0.0..1.0).contains(&self.dev_fraction) {
            return Err(Error::parameter("dev_fraction must be in [0, 1)"));
        }
        Ok(())
    }

    /// Indices of the layers that receive the shallow-channel markers.
    pub fn shallow_layers(&self) -> std::ops::Range<usize> {
        0..(self.layers / 3).max(1)
    }

    /// Indices of the layers that receive the deep-channel markers.
    pub fn deep_layers(&self) -> std::ops::Range<usize> {
        let third = (self.layers / 3).max(1);
        self.layers - third..self.layers
    }

    fn marker_dim_count(&self) -> usize {
        (self.dim / 8).clamp(1, self.dim / 2)
    }

    /// Dim subset shifted in the shallow layers.
    pub fn shallow_dims(&self) -> std::ops::Range<usize> {
        0..self.marker_dim_count()
    }

    /// Dim subset shifted in the deep layers (disjoint from the shallow set).
    pub fn deep_dims(&self) -> std::ops::Range<usize> {
        let n = self.marker_dim_count();
        n..2 * n
    }

    fn tok_marker_dims(&self) -> std::ops::Range<usize> {
        0..(self.tok_dim / 4).max(1)
    }

    pub fn markers_per_segment(&self) -> usize {
        (self.marker_density * self.frames as f64).round() as usize
    }
}

pub struct GeneratedCorpus {
    pub manifest_path: PathBuf,
    pub manifest: Manifest,
    /// Marker frames actually planted, per depressed subject.
    pub marker_frames_per_subject: BTreeMap<String, usize>,
}

fn normal<R: Rng>(rng: &mut R) -> f64 {
    // Box-Muller; one value per call keeps the stream layout simple.
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Frames per held value in the tokenization channel. Encoder frame
/// features are temporally smooth, so the stand-in is piecewise-constant
/// with jitter; without this, collapse barely shortens the token stream
/// and the CTC targets degenerate.
const TOK_RUN_FRAMES: usize = 8;
const TOK_RUN_JITTER: f64 = 0.25;
/// Distinct background states cycled through by every segment, drawn once
/// per corpus. A shared inventory keeps background token sequences
/// structurally identical across classes and segments.
const TOK_CYCLE_LEN: usize = 4;

fn tok_background_cycle<R: Rng>(dim: usize, rng: &mut R) -> Vec<Vec<f64>> {
    (0..TOK_CYCLE_LEN)
        .map(|_| (0..dim).map(|_| normal(rng)).collect())
        .collect()
}

fn smooth_tok_features<R: Rng>(frames: usize, cycle: &[Vec<f64>], rng: &mut R) -> Mat {
    let dim = cycle[0].len();
    let mut m = Mat::zeros(frames, dim);
    for f in 0..frames {
        let base = &cycle[(f / TOK_RUN_FRAMES) % cycle.len()];
        for d in 0..dim {
            m.set(f, d, base[d] + TOK_RUN_JITTER * normal(rng));
        }
    }
    m
}

/// Write the corpus under `out_dir` (feature files in `features/`, the
/// manifest at `manifest.tsv`). Deterministic: the same spec produces a
/// byte-identical corpus.
pub fn generate_synthetic(spec: &SyntheticSpec, out_dir: &Path) -> Result<GeneratedCorpus> {
    spec.validate()?;
    let feature_dir = out_dir.join("features");
    std::fs::create_dir_all(&feature_dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let tok_cycle = tok_background_cycle(spec.tok_dim, &mut rng);
    let mut entries = Vec::new();
    let mut marker_counts = BTreeMap::new();

    let class_plan = [
        (ClassLabel::Control, spec.control_subjects, "ctl"),
        (ClassLabel::Depressed, spec.depressed_subjects, "dep"),
    ];
    for (label, count, prefix) in class_plan {
        let dev_from = count - (spec.dev_fraction * count as f64).ceil() as usize;
        for s in 0..count {
            let subject_id = format!("{prefix}{s:03}");
            let split = if spec.dev_fraction > 0.0 {
                Some(if s >= dev_from { "dev" } else { "train" }.to_string())
            } else {
                None
            };
            let mut subject_markers = 0usize;
            for seg in 0..spec.segments_per_subject {
                let mut layers: Vec<Mat> = (0..spec.layers)
                    .map(|_| {
                        Mat::new(
                            spec.frames,
                            spec.dim,
                            (0..spec.frames * spec.dim).map(|_| normal(&mut rng)).collect(),
                        )
                        .unwrap()
                    })
                    .collect();
                let mut tok = smooth_tok_features(spec.frames, &tok_cycle, &mut rng);

                if label == ClassLabel::Depressed
                    && spec.markers_per_segment() > 0
                    && spec.marker_strength > 0.0
                {
                    let marker_frames =
                        index_sample(&mut rng, spec.frames, spec.markers_per_segment());
                    subject_markers += marker_frames.len();
                    for f in marker_frames.iter() {
                        if spec.placement != MarkerPlacement::DeepOnly {
                            for l in spec.shallow_layers() {
                                for d in spec.shallow_dims() {
                                    let v = layers[l].get(f, d) + spec.marker_strength;
                                    layers[l].set(f, d, v);
                                }
                            }
                        }
                        if spec.placement != MarkerPlacement::ShallowOnly {
                            for l in spec.deep_layers() {
                                for d in spec.deep_dims() {
                                    let v = layers[l].get(f, d) + spec.marker_strength;
                                    layers[l].set(f, d, v);
                                }
                            }
                        }
                        // Marker frames land in one dedicated cue cluster
                        // regardless of the background state the frame sat
                        // in, so the codebook isolates them for any cycle.
                        for d in 0..spec.tok_dim {
                            let cue = if spec.tok_marker_dims().contains(&d) {
                                spec.marker_strength
                            } else {
                                0.0
                            };
                            tok.set(f, d, cue + TOK_RUN_JITTER * normal(&mut rng));
                        }
                    }
                }

                let segment_id = format!("{subject_id}_s{seg}");
                let stack = LayerStack::new(layers, spec.frame_rate, &segment_id, &subject_id)?;
                let rel = PathBuf::from("features").join(format!("{segment_id}.hrnf"));
                write_feature_file(&out_dir.join(&rel), &stack, &tok)?;
                entries.push(ManifestEntry {
                    subject_id: subject_id.clone(),
                    label,
                    path: rel,
                    split: split.clone(),
                    duration: Some(spec.frames as f64 / spec.frame_rate),
                });
            }
            if label == ClassLabel::Depressed {
                marker_counts.insert(subject_id, subject_markers);
            }
        }
    }

    let manifest = Manifest::new(entries)?;
    let manifest_path = out_dir.join("manifest.tsv");
    manifest.write_to(&manifest_path)?;
    Ok(GeneratedCorpus {
        manifest_path,
        manifest,
        marker_frames_per_subject: marker_counts,
    })
}
