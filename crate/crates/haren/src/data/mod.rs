//! Corpus ingestion: feature files, manifests, segment cropping, weighted
//! sampling, and the seeded synthetic generator that stands in for a
//! frozen pretrained encoder.

mod feature_file;
mod manifest;
mod sampler;
mod synthetic;

pub use feature_file::{read_feature_file, write_feature_file, LayerStack};
pub use manifest::{Manifest, ManifestEntry};
pub use sampler::{crop_segment, frames_for_duration, WeightedSampler};
pub use synthetic::{generate_synthetic, GeneratedCorpus, MarkerPlacement, SyntheticSpec};

use crate::error::{Error, Result};

/// Binary diagnosis label.
#[derive(
    Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum ClassLabel {
    Control,
    Depressed,
}

impl ClassLabel {
    pub fn from_u8(v: u8) -> Result<Self> {
        match v {
            0 => Ok(ClassLabel::Control),
            1 => Ok(ClassLabel::Depressed),
            _ => Err(Error::data(format!("class label must be 0 or 1, got {v}"))),
        }
    }

    pub fn as_u8(self) -> u8 {
        match self {
            ClassLabel::Control => 0,
            ClassLabel::Depressed => 1,
        }
    }
}
