use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// L2 coefficient; `weight_decay * θ` is added to the gradient before
    /// the moment updates.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// One parameter tensor paired with its gradient for a single update.
pub struct ParamGrad<'a> {
    pub name: &'a str,
    pub param: &'a mut [f64],
    pub grad: &'a [f64],
}

/// Moment accumulators for a fixed list of tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    config: AdamConfig,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(config: AdamConfig, sizes: &[usize]) -> Self {
        Self {
            config,
            step: 0,
            first: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            second: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one bias-corrected Adam update.
    ///
    /// All gradients are checked before any parameter is touched, so a
    /// non-finite gradient leaves the state and parameters unchanged.
    pub fn step(&mut self, tensors: &mut [ParamGrad<'_>]) -> Result<()> {
        if tensors.len() != self.first.len() {
            return Err(Error::shape(
                "adam_step",
                format!("{} tensors for {} slots", tensors.len(), self.first.len()),
            ));
        }
        for (slot, t) in tensors.iter().enumerate() {
            if t.param.len() != self.first[slot].len() || t.grad.len() != t.param.len() {
                return Err(Error::shape(
                    "adam_step",
                    format!(
                        "tensor {}: param {}, grad {}, state {}",
                        t.name,
                        t.param.len(),
                        t.grad.len(),
                        self.first[slot].len()
                    ),
                ));
            }
            if t.grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of {}", t.name)));
            }
        }

        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (slot, t) in tensors.iter_mut().enumerate() {
            let m = &mut self.first[slot];
            let v = &mut self.second[slot];
            for k in 0..t.param.len() {
                let g = t.grad[k] + weight_decay * t.param[k];
                m[k] = beta1 * m[k] + (1.0 - beta1) * g;
                v[k] = beta2 * v[k] + (1.0 - beta2) * g * g;
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                t.param[k] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut state = AdamState::new(AdamConfig::default(), &[3]);
        let mut p = vec![1.0, -2.0, 3.0];
        let g = vec![0.0; 3];
        state
            .step(&mut [ParamGrad { name: "w", param: &mut p, grad: &g }])
            .unwrap();
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
    }

    #[test]
    fn first_step_magnitude() {
        let cfg = AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        };
        let mut state = AdamState::new(cfg, &[1]);
        let mut p = vec![0.0];
        state
            .step(&mut [ParamGrad { name: "w", param: &mut p, grad: &[1.0] }])
            .unwrap();
        // m̂ = v̂ = 1 after bias correction.
        let expected = -0.1 / (1.0 + 1e-8);
        assert!((p[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn deterministic_repeat() {
        let run = || {
            let mut state = AdamState::new(AdamConfig::default(), &[2]);
            let mut p = vec![0.3, -0.7];
            for k in 0..5 {
                let g = vec![0.1 * k as f64, -0.2];
                state
                    .step(&mut [ParamGrad { name: "w", param: &mut p, grad: &g }])
                    .unwrap();
            }
            p
        };
        let a = run();
        let b = run();
        assert_eq!(a[0].to_bits(), b[0].to_bits());
        assert_eq!(a[1].to_bits(), b[1].to_bits());
    }

    #[test]
    fn non_finite_gradient_names_tensor() {
        let mut state = AdamState::new(AdamConfig::default(), &[1]);
        let mut p = vec![1.0];
        let err = state
            .step(&mut [ParamGrad { name: "gcn1.w2", param: &mut p, grad: &[f64::NAN] }])
            .unwrap_err();
        assert!(err.to_string().contains("gcn1.w2"));
        assert_eq!(p, vec![1.0]);
        assert_eq!(state.steps(), 0);
    }

    #[test]
    fn weight_decay_pulls_toward_zero() {
        let cfg = AdamConfig {
            lr: 0.1,
            weight_decay: 0.5,
            ..AdamConfig::default()
        };
        let mut state = AdamState::new(cfg, &[1]);
        let mut p = vec![2.0];
        state
            .step(&mut [ParamGrad { name: "w", param: &mut p, grad: &[0.0] }])
            .unwrap();
        assert!(p[0] < 2.0);
    }
}
