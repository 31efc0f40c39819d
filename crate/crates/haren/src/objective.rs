//! Binary focal loss and the combined training objective.

use crate::autograd::{CustomOp, Graph, Tid};
use crate::error::{Error, Result};

/// Probabilities are clamped to `[CLAMP, 1-CLAMP]` before taking logs.
/// The bound is an implementation guard, not a modelling choice.
pub const PROB_CLAMP: f64 = 1e-7;

/// How the per-sample focal terms are reduced over a batch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    Sum,
    Mean,
}

#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    /// Class-balance factor in (0, 1).
    pub focal_alpha: f64,
    /// Focusing exponent, >= 0.
    pub focal_gamma: f64,
    /// Weight of the CTC term in the combined objective.
    pub ctc_weight: f64,
    /// The CTC term is applied once every this many batches.
    pub ctc_every_n_batches: u64,
    /// Batch reduction for the focal term.
    pub reduction: Reduction,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            focal_alpha: 0.5,
            focal_gamma: 1.5,
            ctc_weight: 1.0,
            ctc_every_n_batches: 5,
            reduction: Reduction::Sum,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.focal_alpha > 0.0 && self.focal_alpha < 1.0) {
            return Err(Error::parameter(format!(
                "focal_alpha must be in (0, 1), got {}",
                self.focal_alpha
            )));
        }
        if self.focal_gamma < 0.0 || !self.focal_gamma.is_finite() {
            return Err(Error::parameter(format!(
                "focal_gamma must be >= 0, got {}",
                self.focal_gamma
            )));
        }
        if self.ctc_weight < 0.0 || !self.ctc_weight.is_finite() {
            return Err(Error::parameter(format!(
                "ctc_weight must be >= 0, got {}",
                self.ctc_weight
            )));
        }
        if self.ctc_every_n_batches == 0 {
            return Err(Error::parameter("ctc_every_n_batches must be >= 1"));
        }
        Ok(())
    }

    /// True when the CTC term participates for this (1-based) batch index.
    pub fn ctc_active(&self, batch_index: u64) -> bool {
        self.ctc_weight > 0.0 && batch_index.is_multiple_of(self.ctc_every_n_batches)
    }
}

fn focal_term(p: f64, y: f64, alpha: f64, gamma: f64) -> f64 {
    let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    -(alpha * y * (1.0 - p).powf(gamma) * p.ln()
        + (1.0 - alpha) * (1.0 - y) * p.powf(gamma) * (1.0 - p).ln())
}

fn focal_term_grad(p: f64, y: f64, alpha: f64, gamma: f64) -> f64 {
    if p <= PROB_CLAMP || p >= 1.0 - PROB_CLAMP {
        return 0.0;
    }
    // d/dp of the positive term: -alpha * [ (1-p)^g / p - g (1-p)^(g-1) ln p ]
    // d/dp of the negative term: -(1-alpha) * [ g p^(g-1) ln(1-p) - p^g / (1-p) ]
    let pos = if y != 0.0 {
        let base = (1.0 - p).powf(gamma);
        let dmod = if gamma == 0.0 {
            0.0
        } else {
            gamma * (1.0 - p).powf(gamma - 1.0)
        };
        -alpha * y * (base / p - dmod * p.ln())
    } else {
        0.0
    };
    let neg = if y != 1.0 {
        let base = p.powf(gamma);
        let dmod = if gamma == 0.0 {
            0.0
        } else {
            gamma * p.powf(gamma - 1.0)
        };
        -(1.0 - alpha) * (1.0 - y) * (dmod * (1.0 - p).ln() - base / (1.0 - p))
    } else {
        0.0
    };
    pos + neg
}

/// Binary focal loss over a batch of predicted probabilities.
pub fn focal_loss(probs: &[f64], labels: &[u8], cfg: &LossConfig) -> Result<f64> {
    if probs.len() != labels.len() {
        return Err(Error::contract(format!(
            "focal_loss: {} probabilities for {} labels",
            probs.len(),
            labels.len()
        )));
    }
    if probs.is_empty() {
        return Err(Error::contract("focal_loss over an empty batch"));
    }
    let sum: f64 = probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| focal_term(p, y as f64, cfg.focal_alpha, cfg.focal_gamma))
        .sum();
    Ok(match cfg.reduction {
        Reduction::Sum => sum,
        Reduction::Mean => sum / probs.len() as f64,
    })
}

/// The combined objective: the focal term plus `ctc_weight` times the CTC
/// term on cadence batches where a feasible CTC value exists.
pub fn combined_loss(focal: f64, ctc: Option<f64>, batch_index: u64, cfg: &LossConfig) -> f64 {
    match ctc {
        Some(c) if cfg.ctc_active(batch_index) => focal + cfg.ctc_weight * c,
        _ => focal,
    }
}

/// Graph node computing the focal loss over scalar probability parents.
#[derive(Debug)]
pub(crate) struct FocalLossOp {
    pub labels: Vec<f64>,
    pub alpha: f64,
    pub gamma: f64,
    pub reduction: Reduction,
}

impl CustomOp for FocalLossOp {
    fn name(&self) -> &'static str {
        "focal_loss"
    }

    fn forward(&self, inputs: &[(&[f64], &[usize])]) -> Result<(Vec<f64>, Vec<usize>)> {
        if inputs.len() != self.labels.len() {
            return Err(Error::contract(format!(
                "focal_loss: {} probabilities for {} labels",
                inputs.len(),
                self.labels.len()
            )));
        }
        let mut sum = 0.0;
        for ((vals, _), &y) in inputs.iter().zip(&self.labels) {
            sum += focal_term(vals[0], y, self.alpha, self.gamma);
        }
        if self.reduction == Reduction::Mean {
            sum /= inputs.len() as f64;
        }
        Ok((vec![sum], vec![1]))
    }

    fn backward(
        &self,
        inputs: &[(&[f64], &[usize])],
        _output: &[f64],
        output_grad: &[f64],
    ) -> Result<Vec<Vec<f64>>> {
        let scale = match self.reduction {
            Reduction::Sum => output_grad[0],
            Reduction::Mean => output_grad[0] / inputs.len() as f64,
        };
        Ok(inputs
            .iter()
            .zip(&self.labels)
            .map(|((vals, _), &y)| {
                vec![scale * focal_term_grad(vals[0], y, self.alpha, self.gamma)]
            })
            .collect())
    }
}

/// Record the focal loss over probability nodes in a graph.
pub fn focal_loss_node(
    g: &mut Graph,
    probs: &[Tid],
    labels: &[u8],
    cfg: &LossConfig,
) -> Result<Tid> {
    if probs.len() != labels.len() {
        return Err(Error::contract(format!(
            "focal_loss: {} probability nodes for {} labels",
            probs.len(),
            labels.len()
        )));
    }
    g.custom(
        probs,
        Box::new(FocalLossOp {
            labels: labels.iter().map(|&y| y as f64).collect(),
            alpha: cfg.focal_alpha,
            gamma: cfg.focal_gamma,
            reduction: cfg.reduction,
        }),
    )
}
