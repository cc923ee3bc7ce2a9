//! AdaBelief: Adam with the second moment tracking `(g − m)²`, the deviation
//! of the gradient from its running mean.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaBeliefConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled: applied as `θ ← θ − lr·wd·θ`.
    pub weight_decay: f64,
}

impl Default for AdaBeliefConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepOutcome {
    Applied,
    /// A gradient held a non-finite value; nothing was changed.
    Skipped,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdaBelief {
    pub config: AdaBeliefConfig,
    m: Vec<Tensor>,
    s: Vec<Tensor>,
    step: u64,
}

impl AdaBelief {
    pub fn new(config: AdaBeliefConfig, params: &[Tensor]) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self {
            config,
            m: zeros.clone(),
            s: zeros,
            step: 0,
        }
    }

    /// Rebuilds saved state.
    pub fn from_parts(config: AdaBeliefConfig, m: Vec<Tensor>, s: Vec<Tensor>, step: u64) -> Result<Self> {
        if m.len() != s.len() || m.iter().zip(&s).any(|(a, b)| a.shape() != b.shape()) {
            return Err(Error::Input("optimizer moments do not line up".into()));
        }
        Ok(Self { config, m, s, step })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &[Tensor] {
        &self.m
    }

    pub fn second_moment(&self) -> &[Tensor] {
        &self.s
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<StepOutcome> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(Error::Contract(format!(
                "optimizer tracks {} blocks, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.shape() != self.m[i].shape() {
                return Err(Error::shape("optimizer step", p.shape(), g.shape()));
            }
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            warn!("non-finite gradient in parameter block {i}; step {} skipped", self.step + 1);
            return Ok(StepOutcome::Skipped);
        }

        let AdaBeliefConfig {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        self.step += 1;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for ((p, g), (m, s)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.s.iter_mut())) {
            let it = p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut().iter_mut().zip(s.data_mut()));
            for ((theta, &g), (m, s)) in it {
                *m = beta1 * *m + (1.0 - beta1) * g;
                let dev = g - *m;
                *s = beta2 * *s + (1.0 - beta2) * dev * dev + eps;
                let m_hat = *m / bc1;
                let s_hat = *s / bc2;
                if weight_decay != 0.0 {
                    *theta -= lr * weight_decay * *theta;
                }
                *theta -= lr * m_hat / (s_hat.sqrt() + eps);
            }
        }
        Ok(StepOutcome::Applied)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_opt(lr: f64) -> (AdaBelief, Vec<Tensor>) {
        let params = vec![Tensor::scalar(1.0)];
        let cfg = AdaBeliefConfig { lr, ..Default::default() };
        (AdaBelief::new(cfg, &params), params)
    }

    #[test]
    fn zero_gradient_first_step_leaves_params() {
        let (mut opt, mut params) = scalar_opt(0.1);
        opt.step(&mut params, &[Tensor::scalar(0.0)]).unwrap();
        assert_eq!(params[0].item(), 1.0);
    }

    #[test]
    fn first_step_matches_hand_value() {
        let (mut opt, mut params) = scalar_opt(0.01);
        opt.step(&mut params, &[Tensor::scalar(1.0)]).unwrap();
        // m = 0.1, s = 0.001·0.81 + 1e-8, m̂ = 1, ŝ = 0.81 + 1e-5.
        let s_hat: f64 = 0.81001;
        let want = 1.0 - 0.01 / (s_hat.sqrt() + 1e-8);
        assert!((params[0].item() - want).abs() < 1e-12, "{}", params[0].item());
        assert!((opt.first_moment()[0].item() - 0.1).abs() < 1e-15);
        assert!((opt.second_moment()[0].item() - 0.00081001).abs() < 1e-15);
    }

    /// The recursion written out independently for a scalar.
    fn scalar_oracle(grads: &[f64], lr: f64) -> Vec<f64> {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        let (mut theta, mut m, mut s) = (1.0, 0.0, 0.0);
        let mut out = Vec::new();
        for (t, &g) in grads.iter().enumerate() {
            let t = (t + 1) as i32;
            m = b1 * m + (1.0 - b1) * g;
            s = b2 * s + (1.0 - b2) * (g - m) * (g - m) + eps;
            theta -= lr * (m / (1.0 - b1.powi(t))) / ((s / (1.0 - b2.powi(t))).sqrt() + eps);
            out.push(theta);
        }
        out
    }

    #[test]
    fn constant_gradient_decreases_strictly() {
        let (mut opt, mut params) = scalar_opt(0.01);
        let oracle = scalar_oracle(&[2.0; 5], 0.01);
        let mut prev = params[0].item();
        for want in oracle {
            opt.step(&mut params, &[Tensor::scalar(2.0)]).unwrap();
            let now = params[0].item();
            assert!(now < prev);
            assert!((now - want).abs() < 1e-14);
            prev = now;
        }
        assert_eq!(opt.step_count(), 5);
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let (mut opt, mut params) = scalar_opt(0.0);
        for g in [3.0, -1.0, 0.5] {
            opt.step(&mut params, &[Tensor::scalar(g)]).unwrap();
        }
        assert_eq!(params[0].item(), 1.0);
        assert!(opt.second_moment()[0].item() >= 0.0);
    }

    #[test]
    fn non_finite_gradient_skips_step() {
        let (mut opt, mut params) = scalar_opt(0.1);
        let before = opt.clone();
        let out = opt.step(&mut params, &[Tensor::scalar(f64::NAN)]).unwrap();
        assert_eq!(out, StepOutcome::Skipped);
        assert_eq!(params[0].item(), 1.0);
        assert_eq!(opt, before);
    }

    #[test]
    fn weight_decay_is_decoupled() {
        let params = vec![Tensor::scalar(2.0)];
        let cfg = AdaBeliefConfig {
            lr: 0.1,
            weight_decay: 0.5,
            ..Default::default()
        };
        let mut opt = AdaBelief::new(cfg, &params);
        let mut p = params;
        opt.step(&mut p, &[Tensor::scalar(0.0)]).unwrap();
        assert!((p[0].item() - (2.0 - 0.1 * 0.5 * 2.0)).abs() < 1e-15);
    }

    #[test]
    fn rejects_mismatched_blocks() {
        let (mut opt, mut params) = scalar_opt(0.1);
        assert!(opt.step(&mut params, &[]).is_err());
        assert!(opt.step(&mut params, &[Tensor::zeros([2])]).is_err());
    }
}
