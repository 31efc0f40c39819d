//! Central finite-difference gradient verification.
//!
//! The checker perturbs one scalar at a time by ±ε, re-evaluates the loss,
//! and compares the symmetric difference quotient against the analytic
//! gradient from the tape. It is only meaningful in 64-bit mode.

use crate::autograd::ParamSet;
use crate::error::Result;

/// Step used by the symmetric difference quotient.
pub const FD_EPSILON: f64 = 1e-5;

/// Relative-error gate applied to every parameter group.
pub const FD_TOLERANCE: f64 = 1e-4;

/// Relative error with a small absolute floor so that near-zero pairs do
/// not blow up the ratio.
pub fn relative_error(a: f64, b: f64) -> f64 {
    let denom = a.abs().max(b.abs()).max(1e-6);
    (a - b).abs() / denom
}

/// Max relative error between an analytic and a numeric gradient buffer.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max)
}

/// One row of a gradient-check report.
#[derive(Clone, Debug)]
pub struct CheckRow {
    pub group: String,
    pub count: usize,
    pub max_rel_err: f64,
}

impl CheckRow {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= FD_TOLERANCE
    }
}

/// Central finite differences of `loss` with respect to every value of
/// every parameter, one buffer per parameter, in set order.
#[allow(clippy::needless_range_loop)]
pub fn numeric_param_grads<F>(params: &ParamSet, mut loss: F) -> Result<Vec<Vec<f64>>>
where
    F: FnMut(&ParamSet) -> Result<f64>,
{
    let mut work = params.clone();
    let mut out = Vec::with_capacity(params.len());
    for idx in 0..params.len() {
        let n = params.get(idx).values.len();
        let mut grad = vec![0.0; n];
        for j in 0..n {
            let orig = work.get(idx).values[j];
            work.get_mut(idx).values[j] = orig + FD_EPSILON;
            let up = loss(&work)?;
            work.get_mut(idx).values[j] = orig - FD_EPSILON;
            let down = loss(&work)?;
            work.get_mut(idx).values[j] = orig;
            grad[j] = (up - down) / (2.0 * FD_EPSILON);
        }
        out.push(grad);
    }
    Ok(out)
}

/// Compare analytic parameter gradients against finite differences and
/// produce one report row per parameter.
pub fn check_params<F>(
    params: &ParamSet,
    analytic: &[Vec<f64>],
    loss: F,
) -> Result<Vec<CheckRow>>
where
    F: FnMut(&ParamSet) -> Result<f64>,
{
    let numeric = numeric_param_grads(params, loss)?;
    let mut rows = Vec::with_capacity(params.len());
    for (idx, p) in params.iter().enumerate() {
        rows.push(CheckRow {
            group: p.name.clone(),
            count: p.values.len(),
            max_rel_err: max_relative_error(&analytic[idx], &numeric[idx]),
        });
    }
    Ok(rows)
}

/// Finite differences of `loss` with respect to a flat value buffer.
pub fn numeric_grad<F>(values: &[f64], mut loss: F) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let mut work = values.to_vec();
    let mut grad = vec![0.0; values.len()];
    for j in 0..values.len() {
        let orig = work[j];
        work[j] = orig + FD_EPSILON;
        let up = loss(&work)?;
        work[j] = orig - FD_EPSILON;
        let down = loss(&work)?;
        work[j] = orig;
        grad[j] = (up - down) / (2.0 * FD_EPSILON);
    }
    Ok(grad)
}

/// Finite-difference verification of the whole model: the combined
/// focal + CTC loss is differentiated with respect to every parameter
/// group, plus a standalone row for the CTC-loss logit gradient.
///
/// Runs in eval mode (dropout inert) at 64-bit; `frames` frames per
/// segment.
pub fn check_full_model(
    config: &crate::model::ModelConfig,
    variant: crate::model::ModelVariant,
    frames: usize,
    seed: u64,
) -> Result<Vec<CheckRow>> {
    use crate::autograd::{Graph, ParamSet, Precision};
    use crate::ctc::{ctc_loss_node, ctc_loss_with_grad, TokenSequence};
    use crate::data::LayerStack;
    use crate::mat::Mat;
    use crate::model::{forward, ModelParams};
    use crate::objective::{focal_loss_node, LossConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers: Vec<Mat> = (0..config.layers)
        .map(|_| {
            Mat::new(
                frames,
                config.dim,
                (0..frames * config.dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            )
            .unwrap()
        })
        .collect();
    let stack = LayerStack::new(layers, 50.0, "gradcheck", "gradcheck")?;
    // A short target with tokens from both class ranges.
    let k = config.centroids;
    let tokens = if frames >= 3 && k >= 2 {
        vec![1, k + 2, 2]
    } else {
        vec![1]
    };
    let target = TokenSequence::new(tokens, frames)?;
    let loss_cfg = LossConfig::default();

    let base = crate::model::init_params(config, variant, seed)?;
    let loss_fn = |set: &ParamSet| -> Result<f64> {
        let view = ModelParams {
            config: *config,
            variant,
            set: set.clone(),
        };
        let mut g = Graph::new(Precision::F64);
        let bound = view.set.bind(&mut g)?;
        let mut drop_rng = ChaCha8Rng::seed_from_u64(0);
        let out = forward(&mut g, &bound, &view, &stack, false, &mut drop_rng)?;
        let focal = focal_loss_node(&mut g, &[out.probability], &[1], &loss_cfg)?;
        let ctc = ctc_loss_node(&mut g, out.frame_logits, &target)?;
        let total = g.add(focal, ctc)?;
        Ok(g.scalar(total))
    };

    // Analytic gradients from one tape sweep.
    let analytic: Vec<Vec<f64>> = {
        let view = ModelParams {
            config: *config,
            variant,
            set: base.set.clone(),
        };
        let mut g = Graph::new(Precision::F64);
        let bound = view.set.bind(&mut g)?;
        let mut drop_rng = ChaCha8Rng::seed_from_u64(0);
        let out = forward(&mut g, &bound, &view, &stack, false, &mut drop_rng)?;
        let focal = focal_loss_node(&mut g, &[out.probability], &[1], &loss_cfg)?;
        let ctc = ctc_loss_node(&mut g, out.frame_logits, &target)?;
        let total = g.add(focal, ctc)?;
        let grads = g.backward(total)?;
        (0..view.set.len()).map(|i| grads.get(&g, bound.tid(i))).collect()
    };
    let mut rows = check_params(&base.set, &analytic, loss_fn)?;

    // Standalone CTC-loss logit gradient.
    let vocab = config.vocab();
    let logits: Vec<f64> = (0..frames * vocab).map(|_| rng.gen_range(-1.5..1.5)).collect();
    let (_, ctc_analytic) = ctc_loss_with_grad(&logits, frames, vocab, &target)?;
    let ctc_numeric = numeric_grad(&logits, |l| {
        ctc_loss_with_grad(l, frames, vocab, &target).map(|(v, _)| v)
    })?;
    rows.push(CheckRow {
        group: "ctc_loss.logits".to_string(),
        count: logits.len(),
        max_rel_err: max_relative_error(&ctc_analytic, &ctc_numeric),
    });
    Ok(rows)
}
