use serde::{Deserialize, Serialize};

use super::params::Parameters;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias-corrected moment estimates.
#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl Adam {
    pub fn new(num_values: usize, config: AdamConfig) -> Self {
        Adam {
            config,
            m: vec![0.0; num_values],
            v: vec![0.0; num_values],
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step_slice(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::shape(
                "adam_step",
                format!("{} params, {} grads, state {}", params.len(), grads.len(), self.m.len()),
            ));
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("gradient entry {i}")));
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powf(self.step as f64);
        let c2 = 1.0 - beta2.powf(self.step as f64);
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }

    pub fn step<P: Parameters>(&mut self, params: &mut P, grads: &P) -> Result<()> {
        let mut flat = params.to_flat();
        self.step_slice(&mut flat, &grads.to_flat())?;
        params.assign_flat(&flat);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let cfg = AdamConfig { lr: 0.01, ..Default::default() };
        let mut adam = Adam::new(3, cfg);
        let mut p = vec![1.0, -2.0, 0.5];
        adam.step_slice(&mut p, &[1.0; 3]).unwrap();
        let delta = 0.01 / (1.0 + 1e-8);
        for (after, before) in p.iter().zip([1.0, -2.0, 0.5]) {
            assert!((before - after - delta).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut adam = Adam::new(2, AdamConfig::default());
        let mut p = vec![0.3, 0.7];
        adam.step_slice(&mut p, &[0.0, 0.0]).unwrap();
        assert_eq!(p, vec![0.3, 0.7]);
    }

    #[test]
    fn two_steps_descend_a_quadratic() {
        // loss = theta^2 / 2, gradient = theta.
        let cfg = AdamConfig { lr: 0.1, ..Default::default() };
        let mut adam = Adam::new(1, cfg);
        let mut theta = vec![1.0];
        let mut losses = vec![0.5];
        for _ in 0..2 {
            let g = theta.clone();
            adam.step_slice(&mut theta, &g).unwrap();
            losses.push(0.5 * theta[0] * theta[0]);
        }
        // Hand-iterated: theta_1 = 0.9, m_hat = 0.18 / 0.19,
        // v_hat = 0.001809 / 0.001999, theta_2 = 0.9 - 0.1 * m_hat / sqrt(v_hat).
        assert!((theta[0] - 0.800_412_26).abs() < 1e-6, "{}", theta[0]);
        assert!(losses[2] < losses[1] && losses[1] < losses[0]);
    }

    #[test]
    fn rejects_non_finite_gradient() {
        let mut adam = Adam::new(1, AdamConfig::default());
        let mut p = vec![0.0];
        assert!(matches!(adam.step_slice(&mut p, &[f64::NAN]), Err(Error::NonFinite(_))));
        assert_eq!(adam.steps_taken(), 0);
    }
}
