//! Adam with decoupled weight decay.

use crate::autograd::ParamSet;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

/// First/second moment accumulators plus the step counter, one slot pair
/// per parameter in set order.
#[derive(Clone, Debug)]
pub struct AdamState {
    cfg: AdamConfig,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    step: u64,
}

impl AdamState {
    pub fn new(params: &ParamSet, cfg: AdamConfig) -> Self {
        let first = params.iter().map(|p| vec![0.0; p.values.len()]).collect();
        let second = params.iter().map(|p| vec![0.0; p.values.len()]).collect();
        AdamState {
            cfg,
            first,
            second,
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn config(&self) -> &AdamConfig {
        &self.cfg
    }

    /// Bias-corrected Adam update followed by decoupled weight decay
    /// (`p -= lr * wd * p`). Rejects non-finite gradients before touching
    /// any state.
    #[allow(clippy::needless_range_loop)]
    pub fn step(&mut self, params: &mut ParamSet, grads: &[Vec<f64>]) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::contract(format!(
                "adam_step: {} gradient buffers for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        for (idx, g) in grads.iter().enumerate() {
            if g.len() != params.get(idx).values.len() {
                return Err(Error::contract(format!(
                    "adam_step: gradient length {} for parameter {} of length {}",
                    g.len(),
                    params.get(idx).name,
                    params.get(idx).values.len()
                )));
            }
            if let Some(bad) = g.iter().find(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "gradient of {} contains {}",
                    params.get(idx).name,
                    bad
                )));
            }
        }

        self.step += 1;
        let t = self.step as i32;
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        for idx in 0..params.len() {
            let m = &mut self.first[idx];
            let v = &mut self.second[idx];
            let g = &grads[idx];
            let p = &mut params.get_mut(idx).values;
            for j in 0..p.len() {
                m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g[j];
                v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                p[j] -= c.lr * m_hat / (v_hat.sqrt() + c.epsilon);
                p[j] -= c.lr * c.weight_decay * p[j];
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param(values: Vec<f64>) -> ParamSet {
        let mut set = ParamSet::new();
        let n = values.len();
        set.add("w", vec![n], values);
        set
    }

    #[test]
    fn zero_grad_zero_decay_is_fixed_point() {
        let mut params = one_param(vec![0.3, -0.7]);
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        let mut state = AdamState::new(&params, cfg);
        state.step(&mut params, &[vec![0.0, 0.0]]).unwrap();
        assert_eq!(params.get(0).values, vec![0.3, -0.7]);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn first_step_magnitude_is_roughly_lr() {
        // Hand evaluation of the recurrence at t=1 with g=0.5:
        // m_hat = g, v_hat = g^2, delta = lr * g / (|g| + eps).
        let mut params = one_param(vec![1.0]);
        let cfg = AdamConfig {
            lr: 1e-3,
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        let mut state = AdamState::new(&params, cfg);
        state.step(&mut params, &[vec![0.5]]).unwrap();
        let delta = 1.0 - params.get(0).values[0];
        assert!((delta - 0.0009999999800000003).abs() < 1e-15);

        // Direction follows the sign of the gradient.
        let mut params = one_param(vec![1.0]);
        let mut state = AdamState::new(&params, cfg);
        state.step(&mut params, &[vec![-2.0]]).unwrap();
        assert!(params.get(0).values[0] > 1.0);
    }

    #[test]
    fn decay_shrinks_param_with_zero_gradient() {
        let mut params = one_param(vec![1.0]);
        let cfg = AdamConfig {
            lr: 1e-4,
            weight_decay: 1e-4,
            ..AdamConfig::default()
        };
        let mut state = AdamState::new(&params, cfg);
        state.step(&mut params, &[vec![0.0]]).unwrap();
        assert!((params.get(0).values[0] - (1.0 - 1e-8)).abs() < 1e-18);
    }

    #[test]
    fn non_finite_gradient_aborts_without_state_change() {
        let mut params = one_param(vec![1.0]);
        let mut state = AdamState::new(&params, AdamConfig::default());
        let err = state.step(&mut params, &[vec![f64::NAN]]).unwrap_err();
        assert!(err.to_string().contains("non-finite"));
        assert_eq!(state.step_count(), 0);
        assert_eq!(params.get(0).values[0], 1.0);
    }

    #[test]
    fn moment_shapes_match_params() {
        let mut set = ParamSet::new();
        set.add("a", vec![2, 3], vec![0.0; 6]);
        set.add("b", vec![4], vec![0.0; 4]);
        let state = AdamState::new(&set, AdamConfig::default());
        assert_eq!(state.first[0].len(), 6);
        assert_eq!(state.second[1].len(), 4);
    }
}
