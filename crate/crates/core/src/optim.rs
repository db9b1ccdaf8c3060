//! Adam with bias correction and the stepped learning-rate schedule.

use std::collections::HashMap;

use portrait_tensor::Gradients;
use portrait_tensor::init::round_to_f32;

use crate::error::{CoreError, Result};
use crate::params::ParamSet;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-4,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Adam {
    pub cfg: AdamConfig,
    t: u64,
    moments: HashMap<String, (Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Adam {
            cfg,
            t: 0,
            moments: HashMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Updates every trainable parameter that received a gradient, then
    /// rounds it to f32. A gradient on a frozen parameter is an error.
    pub fn step(&mut self, params: &mut ParamSet, grads: &Gradients, lr: f64) -> Result<()> {
        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.cfg;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for p in params.iter_mut() {
            let Some(g) = grads.param(&p.name) else { continue };
            if p.frozen {
                return Err(CoreError::FrozenMutation(p.name.clone()));
            }
            let n = p.value.numel();
            let (m, v) = self
                .moments
                .entry(p.name.clone())
                .or_insert_with(|| (vec![0.0; n], vec![0.0; n]));
            for (((w, &gi), mi), vi) in p.value.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                *w -= lr * (*mi / bc1) / ((*vi / bc2).sqrt() + eps);
            }
            round_to_f32(&mut p.value);
        }
        Ok(())
    }
}

/// `base * decay^floor(epoch / every)`.
pub fn lr_at(base: f64, decay: f64, every: usize, epoch: usize) -> f64 {
    base * decay.powi((epoch / every.max(1)) as i32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use portrait_tensor::{Param, Tape, Tensor};

    #[test]
    fn schedule_values() {
        assert_eq!(lr_at(0.001, 0.9, 2, 0), 0.001);
        assert_eq!(lr_at(0.001, 0.9, 2, 1), 0.001);
        assert_eq!(lr_at(0.001, 0.9, 2, 2), 0.001 * 0.9);
        assert_eq!(lr_at(0.001, 0.9, 2, 5), 0.001 * 0.9f64.powi(2));
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut ps = ParamSet::new();
        ps.insert("w", Tensor::new([2], vec![1.0, -1.0]).unwrap()).unwrap();
        let tape = Tape::new();
        let b = ps.bind(&tape);
        let g = b.get("w").unwrap().square().unwrap().sum().unwrap().backward().unwrap();
        let mut adam = Adam::new(AdamConfig::default());
        adam.step(&mut ps, &g, 0.01).unwrap();
        // bias-corrected first step is lr * g / (|g| + eps)
        let d = ps.get("w").unwrap().value.data()[0];
        let want = (1.0 - 0.01 * 2.0 / (2.0 + 1e-4)) as f32 as f64;
        assert_eq!(d, want);
    }

    #[test]
    fn frozen_params_are_skipped() {
        let mut ps = ParamSet::new();
        ps.push(Param::new("w", Tensor::ones([1])).frozen()).unwrap();
        let tape = Tape::new();
        let b = ps.bind(&tape);
        let g = b.get("w").unwrap().sum().unwrap().backward().unwrap();
        let before = ps.hash();
        Adam::new(AdamConfig::default()).step(&mut ps, &g, 0.1).unwrap();
        assert_eq!(ps.hash(), before);
    }
}
