use serde::{Deserialize, Serialize};

use super::{Gradients, ParamStore, Scalar};
use crate::error::{Error, Result};

/// Linear ramp from 0 to `base_lr` over `warmup` steps, constant afterwards.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WarmupSchedule {
    pub base_lr: f64,
    pub warmup: u64,
}

impl WarmupSchedule {
    /// Rate for the 1-based step `step`.
    pub fn lr_at(&self, step: u64) -> f64 {
        if self.warmup == 0 || step >= self.warmup {
            self.base_lr
        } else {
            self.base_lr * step as f64 / self.warmup as f64
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub warmup_steps: u64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            warmup_steps: 0,
        }
    }
}

/// Adam with bias correction. Parameters without a gradient are skipped.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    cfg: AdamConfig,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    step: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(cfg: AdamConfig, store: &ParamStore<T>) -> Self {
        let zeros = |_| Vec::new();
        Self {
            cfg,
            m: (0..store.len()).map(zeros).collect(),
            v: (0..store.len()).map(zeros).collect(),
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn current_lr(&self) -> f64 {
        WarmupSchedule {
            base_lr: self.cfg.lr,
            warmup: self.cfg.warmup_steps,
        }
        .lr_at(self.step.max(1))
    }

    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &Gradients<T>) -> Result<()> {
        let slots = grads.param_slots();
        for g in slots.iter().flatten() {
            if !g.all_finite() {
                return Err(Error::Numeric("non-finite gradient".into()));
            }
        }
        self.step += 1;
        let t = self.step as f64;
        let lr = WarmupSchedule {
            base_lr: self.cfg.lr,
            warmup: self.cfg.warmup_steps,
        }
        .lr_at(self.step);
        let (b1, b2) = (T::lit(self.cfg.beta1), T::lit(self.cfg.beta2));
        let c1 = T::lit(1.0 - self.cfg.beta1.powf(t));
        let c2 = T::lit(1.0 - self.cfg.beta2.powf(t));
        let (lr, eps) = (T::lit(lr), T::lit(self.cfg.eps));
        for id in store.ids().collect::<Vec<_>>() {
            let Some(g) = slots.get(id.index()).and_then(|g| g.as_ref()) else { continue };
            let p = store.get_mut(id);
            let (m, v) = (&mut self.m[id.index()], &mut self.v[id.index()]);
            if m.is_empty() {
                *m = vec![T::zero(); p.numel()];
                *v = vec![T::zero(); p.numel()];
            }
            for (((pi, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + (T::one() - b1) * gi;
                *vi = b2 * *vi + (T::one() - b2) * gi * gi;
                let mhat = *mi / c1;
                let vhat = *vi / c2;
                *pi = *pi - lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Scales all parameter gradients so their global norm is at most
/// `max_norm`. Returns the norm before clipping.
pub fn clip_grad_norm<T: Scalar>(grads: &mut Gradients<T>, max_norm: f64) -> f64 {
    let norm = grads.global_norm().to_f64().unwrap_or(f64::NAN);
    if norm > max_norm && norm.is_finite() {
        let s = T::lit(max_norm / norm);
        for g in grads.params_mut() {
            g.data_mut().iter_mut().for_each(|x| *x = *x * s);
        }
    }
    norm
}
