//! Segment cropping and inverse-frequency weighted sampling.

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;

use super::feature_file::LayerStack;
use super::ClassLabel;
use crate::error::{Error, Result};
use crate::mat::Mat;

/// Frame count corresponding to a duration at the file's frame rate.
pub fn frames_for_duration(seconds: f64, frame_rate: f64) -> usize {
    (seconds * frame_rate).round() as usize
}

/// Uniform-random contiguous window of `target_frames`, applied at the
/// same offset to every layer and to the tokenization features so the
/// stack stays frame-aligned. Sequences no longer than the window are
/// returned unchanged.
pub fn crop_segment<R: Rng>(
    stack: &LayerStack,
    tok: &Mat,
    target_frames: usize,
    rng: &mut R,
) -> Result<(LayerStack, Mat)> {
    if target_frames == 0 {
        return Err(Error::parameter("crop length must be >= 1 frame"));
    }
    let t = stack.frames();
    if t <= target_frames {
        return Ok((stack.clone(), tok.clone()));
    }
    let offset = rng.gen_range(0..=t - target_frames);
    let layers: Vec<Mat> = stack
        .layers()
        .iter()
        .map(|l| l.slice_rows(offset, target_frames))
        .collect();
    let cropped = LayerStack::new(
        layers,
        stack.frame_rate,
        stack.segment_id.clone(),
        stack.subject_id.clone(),
    )?;
    Ok((cropped, tok.slice_rows(offset, target_frames)))
}

/// Draws segment indices with probability proportional to the inverse of
/// their class frequency, so both classes appear 1:1 in expectation.
pub struct WeightedSampler {
    dist: WeightedIndex<f64>,
    len: usize,
}

impl WeightedSampler {
    pub fn new(labels: &[ClassLabel]) -> Result<Self> {
        let depressed = labels.iter().filter(|l| **l == ClassLabel::Depressed).count();
        let control = labels.len() - depressed;
        if depressed == 0 || control == 0 {
            return Err(Error::config(
                "weighted sampling requires both classes in the manifest",
            ));
        }
        let weights: Vec<f64> = labels
            .iter()
            .map(|l| match l {
                ClassLabel::Control => 1.0 / control as f64,
                ClassLabel::Depressed => 1.0 / depressed as f64,
            })
            .collect();
        Ok(WeightedSampler {
            dist: WeightedIndex::new(&weights)
                .map_err(|e| Error::config(format!("bad sampling weights: {e}")))?,
            len: labels.len(),
        })
    }

    pub fn draw<R: Rng>(&self, rng: &mut R) -> usize {
        self.dist.sample(rng)
    }

    /// One epoch worth of draws (by convention, the dataset size).
    pub fn draw_epoch<R: Rng>(&self, n: usize, rng: &mut R) -> Vec<usize> {
        (0..n).map(|_| self.draw(rng)).collect()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}
