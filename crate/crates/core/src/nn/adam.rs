use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Bias-corrected Adam over an ordered list of parameter slots.
///
/// Moment buffers are allocated on the first step from the slot shapes; every
/// later step must present the same shapes in the same order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: Vec<&mut [f64]>, grads: Vec<&[f64]>) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Shape(format!(
                "{} parameter slots but {} gradient slots",
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(&grads).enumerate() {
            if p.len() != g.len() {
                return Err(Error::Shape(format!(
                    "slot {i}: {} parameters, {} gradients",
                    p.len(),
                    g.len()
                )));
            }
        }
        if self.first.is_empty() {
            self.first = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.second = self.first.clone();
        } else if self.first.len() != params.len()
            || self.first.iter().zip(&params).any(|(m, p)| m.len() != p.len())
        {
            return Err(Error::Shape("parameter layout changed between steps".into()));
        }

        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for ((p, g), (m, v)) in params
            .into_iter()
            .zip(grads)
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
        {
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut adam = AdamState::new(AdamConfig::default());
        let mut p = vec![1.0, -2.0, 3.0];
        for _ in 0..5 {
            adam.step(vec![&mut p], vec![&[0.0, 0.0, 0.0]]).unwrap();
        }
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
    }

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let config = AdamConfig::default();
        let mut adam = AdamState::new(config);
        let g = [0.3, -4.0, 1e-3];
        let mut p = vec![0.0; 3];
        adam.step(vec![&mut p], vec![&g]).unwrap();
        for (pi, gi) in p.iter().zip(&g) {
            // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps)
            let expected = -config.lr * gi / (gi.abs() + config.epsilon);
            assert!((pi - expected).abs() < 1e-18);
            assert!((pi.abs() - config.lr).abs() < 1e-4 * config.lr);
            assert_eq!(pi.signum(), -gi.signum());
        }
    }

    #[test]
    fn converges_on_shifted_quadratic() {
        let mut adam = AdamState::new(AdamConfig {
            lr: 0.05,
            ..AdamConfig::default()
        });
        let mut w = vec![0.0];
        for _ in 0..200 {
            let g = [2.0 * (w[0] - 3.0)];
            adam.step(vec![&mut w], vec![&g]).unwrap();
        }
        assert!((w[0] - 3.0).abs() < 0.05, "{}", w[0]);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut adam = AdamState::new(AdamConfig::default());
        let mut p = vec![0.0; 2];
        assert!(adam.step(vec![&mut p], vec![&[1.0]]).is_err());
        adam.step(vec![&mut p], vec![&[1.0, 1.0]]).unwrap();
        let mut q = vec![0.0; 3];
        assert!(adam.step(vec![&mut q], vec![&[1.0, 1.0, 1.0]]).is_err());
    }
}
