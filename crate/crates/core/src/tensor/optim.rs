//! Adam with decoupled weight decay, plus cosine learning-rate annealing.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled weight decay: applied directly to the parameter, scaled
    /// by the step's learning rate, independent of the moment estimates.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 1e-4 }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v, lo, hi) in [
            ("beta1", self.beta1, 0.0, 1.0),
            ("beta2", self.beta2, 0.0, 1.0),
        ] {
            if !(lo..hi).contains(&v) {
                return Err(Error::invalid(name, format!("{v} outside [{lo}, {hi})")));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::invalid("eps", format!("{} must be > 0", self.eps)));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::invalid("weight_decay", "must be >= 0".to_string()));
        }
        Ok(())
    }
}

/// Per-parameter first/second moment state. Construct once per parameter
/// list; the list's length and per-entry sizes are fixed afterwards.
#[derive(Debug, Clone)]
pub struct AdamState {
    cfg: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(cfg: AdamConfig, sizes: &[usize]) -> Result<AdamState> {
        cfg.validate()?;
        Ok(AdamState {
            cfg,
            step: 0,
            m: sizes.iter().map(|n| vec![0.0; *n]).collect(),
            v: sizes.iter().map(|n| vec![0.0; *n]).collect(),
        })
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    fn check_arity(&self, n: usize) -> Result<()> {
        if n != self.m.len() {
            return Err(Error::invalid(
                "params",
                format!("{n} parameters but optimizer state holds {}", self.m.len()),
            ));
        }
        Ok(())
    }

    fn update_one(&mut self, idx: usize, param: &mut [f64], grad: &[f64], lr: f64) {
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        let (m, v) = (&mut self.m[idx], &mut self.v[idx]);
        for i in 0..param.len() {
            let g = grad[i];
            m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
            v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            param[i] -= lr * (mhat / (vhat.sqrt() + c.eps) + c.weight_decay * param[i]);
        }
    }

    /// One step over raw buffers. `grads[i] = None` skips parameter `i`
    /// entirely (no update, moments untouched), mirroring what happens to
    /// parameters that took no part in the loss.
    pub fn step_raw(
        &mut self,
        params: &mut [Vec<f64>],
        grads: &[Option<Vec<f64>>],
        lr: f64,
    ) -> Result<()> {
        self.check_arity(params.len())?;
        if grads.len() != params.len() {
            return Err(Error::invalid(
                "grads",
                format!("{} grads for {} params", grads.len(), params.len()),
            ));
        }
        if !(lr.is_finite() && lr >= 0.0) {
            return Err(Error::invalid("lr", format!("{lr}")));
        }
        for (i, p) in params.iter().enumerate() {
            if p.len() != self.m[i].len() {
                return Err(Error::invalid(
                    "params",
                    format!("param {i} has {} values, state expects {}", p.len(), self.m[i].len()),
                ));
            }
            if let Some(g) = &grads[i] {
                if g.len() != p.len() {
                    return Err(Error::invalid(
                        "grads",
                        format!("grad {i} has {} values for a {}-value param", g.len(), p.len()),
                    ));
                }
            }
        }
        self.step += 1;
        for i in 0..params.len() {
            if let Some(g) = &grads[i] {
                let g = g.clone();
                self.update_one(i, &mut params[i], &g, lr);
            }
        }
        Ok(())
    }

    /// One step over leaf tensors, reading each tensor's accumulated
    /// gradient buffer. Tensor data is immutable, so this is functional:
    /// it returns fresh parameter leaves and the caller swaps them in.
    pub fn step_tensors(&mut self, params: &[Tensor], lr: f64) -> Result<Vec<Tensor>> {
        let mut bufs: Vec<Vec<f64>> = params.iter().map(|p| p.data().to_vec()).collect();
        let grads: Vec<Option<Vec<f64>>> = params.iter().map(|p| p.grad()).collect();
        self.step_raw(&mut bufs, &grads, lr)?;
        params
            .iter()
            .zip(bufs)
            .map(|(p, data)| Tensor::param(data, p.shape()))
            .collect()
    }
}

/// Half-cosine decay from `base_lr` at step 0 to `min_lr` at
/// `total_steps`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CosineSchedule {
    pub base_lr: f64,
    pub min_lr: f64,
    pub total_steps: u64,
}

impl CosineSchedule {
    pub fn new(base_lr: f64, min_lr: f64, total_steps: u64) -> Result<CosineSchedule> {
        if !(base_lr.is_finite() && min_lr.is_finite()) || base_lr < min_lr || min_lr < 0.0 {
            return Err(Error::invalid(
                "lr",
                format!("need base_lr >= min_lr >= 0, got base {base_lr}, min {min_lr}"),
            ));
        }
        if total_steps == 0 {
            return Err(Error::invalid("total_steps", "must be >= 1".to_string()));
        }
        Ok(CosineSchedule { base_lr, min_lr, total_steps })
    }

    /// Learning rate at `step in [0, total_steps]`; out of range is an
    /// error rather than an implicit clamp.
    pub fn at(&self, step: u64) -> Result<f64> {
        if step > self.total_steps {
            return Err(Error::invalid(
                "step",
                format!("{step} beyond total_steps {}", self.total_steps),
            ));
        }
        let frac = step as f64 / self.total_steps as f64;
        Ok(self.min_lr
            + 0.5 * (self.base_lr - self.min_lr) * (1.0 + (std::f64::consts::PI * frac).cos()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn first_step_moves_by_roughly_lr() {
        // With bias correction the very first update is lr * g/(|g| + eps),
        // i.e. almost exactly lr in magnitude regardless of grad scale.
        for g in [0.5, 3.0, -200.0, 1e-3] {
            let cfg = AdamConfig { weight_decay: 0.0, ..AdamConfig::default() };
            let mut st = AdamState::new(cfg, &[1]).unwrap();
            let mut p = vec![vec![1.0]];
            st.step_raw(&mut p, &[Some(vec![g])], 0.01).unwrap();
            let delta = 1.0 - p[0][0];
            assert_abs_diff_eq!(delta.abs(), 0.01, epsilon = 1e-4);
            assert_eq!(delta.signum(), g.signum());
        }
    }

    #[test]
    fn decay_shrinks_params_without_gradient_signal() {
        let cfg = AdamConfig { weight_decay: 0.1, ..AdamConfig::default() };
        let mut st = AdamState::new(cfg, &[1]).unwrap();
        let mut p = vec![vec![2.0]];
        st.step_raw(&mut p, &[Some(vec![0.0])], 0.5).unwrap();
        // p <- p - lr * wd * p = 2 * (1 - 0.05)
        assert_abs_diff_eq!(p[0][0], 1.9, epsilon = 1e-12);
    }

    #[test]
    fn missing_grad_skips_the_parameter() {
        let mut st = AdamState::new(AdamConfig::default(), &[2, 1]).unwrap();
        let mut p = vec![vec![1.0, -1.0], vec![5.0]];
        st.step_raw(&mut p, &[None, Some(vec![1.0])], 0.1).unwrap();
        assert_eq!(p[0], vec![1.0, -1.0]);
        assert_ne!(p[1][0], 5.0);
    }

    #[test]
    fn step_tensors_returns_fresh_leaves() {
        let mut st = AdamState::new(AdamConfig::default(), &[2]).unwrap();
        let p = Tensor::param(vec![1.0, 2.0], &[2]).unwrap();
        let loss = p.mul(&p).unwrap().sum_all().unwrap();
        loss.backward().unwrap();
        let next = st.step_tensors(std::slice::from_ref(&p), 0.1).unwrap();
        assert_eq!(p.data(), &[1.0, 2.0], "original is untouched");
        assert!(next[0].requires_grad());
        assert!(next[0].data()[0] < 1.0 && next[0].data()[1] < 2.0);
    }

    #[test]
    fn arity_and_size_mismatches_error() {
        let mut st = AdamState::new(AdamConfig::default(), &[2]).unwrap();
        let mut wrong_count = vec![vec![0.0; 2], vec![0.0; 2]];
        assert!(st.step_raw(&mut wrong_count, &[None, None], 0.1).is_err());
        let mut wrong_size = vec![vec![0.0; 3]];
        assert!(st.step_raw(&mut wrong_size, &[None], 0.1).is_err());
    }

    #[test]
    fn cosine_hits_endpoints_and_midpoint() {
        let s = CosineSchedule::new(1e-3, 1e-5, 100).unwrap();
        assert_abs_diff_eq!(s.at(0).unwrap(), 1e-3, epsilon = 1e-18);
        assert_abs_diff_eq!(s.at(100).unwrap(), 1e-5, epsilon = 1e-18);
        assert_abs_diff_eq!(s.at(50).unwrap(), (1e-3 + 1e-5) / 2.0, epsilon = 1e-12);
        // Monotone non-increasing across the whole range.
        let mut prev = f64::INFINITY;
        for step in 0..=100 {
            let lr = s.at(step).unwrap();
            assert!(lr <= prev + 1e-18);
            prev = lr;
        }
        assert!(s.at(101).is_err());
        assert!(CosineSchedule::new(1e-5, 1e-3, 10).is_err());
        assert!(CosineSchedule::new(1e-3, 1e-5, 0).is_err());
    }
}
