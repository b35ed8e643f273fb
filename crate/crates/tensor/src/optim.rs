use crate::error::{contract, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Learning-rate schedule evaluated at the 1-based update count.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LrSchedule {
    Constant(f64),
    /// `initial * (final/initial)^(min(step, steps)/steps)`.
    ExponentialDecay {
        initial: f64,
        final_lr: f64,
        steps: u64,
    },
    /// `scale * d_model^-0.5 * min(step^-0.5, step * warmup^-1.5)`.
    InverseSqrtWarmup {
        d_model: usize,
        warmup: u64,
        scale: f64,
    },
}

impl LrSchedule {
    pub fn lr(&self, step: u64) -> f64 {
        let step = step.max(1);
        match *self {
            LrSchedule::Constant(lr) => lr,
            LrSchedule::ExponentialDecay {
                initial,
                final_lr,
                steps,
            } => {
                let frac = step.min(steps) as f64 / steps.max(1) as f64;
                initial * (final_lr / initial).powf(frac)
            }
            LrSchedule::InverseSqrtWarmup {
                d_model,
                warmup,
                scale,
            } => {
                let s = step as f64;
                let w = warmup.max(1) as f64;
                scale * (d_model as f64).powf(-0.5) * s.powf(-0.5).min(s * w.powf(-1.5))
            }
        }
    }
}

/// Adam moments and step counter for one [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    pub schedule: LrSchedule,
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl Adam {
    pub fn new(store: &ParamStore, config: AdamConfig, schedule: LrSchedule) -> Self {
        let m: Vec<Tensor> = store.iter().map(|(_, p)| Tensor::zeros(p.value.shape())).collect();
        Adam {
            config,
            schedule,
            step: 0,
            v: m.clone(),
            m,
        }
    }

    pub fn current_lr(&self) -> f64 {
        self.schedule.lr(self.step + 1)
    }

    /// Applies one update from the gradients stored in `store`. Gradients are
    /// left untouched; call [`ParamStore::zero_grad`] afterwards.
    pub fn update(&mut self, store: &mut ParamStore) -> Result<()> {
        if store.len() != self.m.len() {
            return Err(contract(format!(
                "optimizer tracks {} parameters, store has {}",
                self.m.len(),
                store.len()
            )));
        }
        for ((_, p), m) in store.iter().zip(&self.m) {
            if p.value.shape() != m.shape() {
                return Err(contract(format!(
                    "parameter {} has shape {:?}, optimizer state {:?}",
                    p.name,
                    p.value.shape(),
                    m.shape()
                )));
            }
        }
        self.step += 1;
        let lr = self.schedule.lr(self.step);
        let AdamConfig { beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for ((p, m), v) in store.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let g = p.grad.data();
            let theta = p.value.data_mut();
            for (((t, gi), mi), vi) in theta
                .iter_mut()
                .zip(g)
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *t -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(v: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.filled("w", &[2], v);
        s
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut s = store_with(0.5);
        let mut adam = Adam::new(&s, AdamConfig::default(), LrSchedule::Constant(1e-3));
        adam.update(&mut s).unwrap();
        assert_eq!(s.iter().next().unwrap().1.value.data(), &[0.5, 0.5]);
        assert_eq!(adam.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // m = 0.1, v = 0.001; bias-corrected both give 1, so delta = -lr/(1+eps).
        let mut s = store_with(0.0);
        s.iter_mut().for_each(|p| p.grad.data_mut().fill(1.0));
        let mut adam = Adam::new(&s, AdamConfig::default(), LrSchedule::Constant(1e-3));
        adam.update(&mut s).unwrap();
        let d = s.iter().next().unwrap().1.value.data()[0];
        assert!((d + 1e-3 / (1.0 + 1e-8)).abs() < 1e-15, "{d}");
    }

    #[test]
    fn constant_gradient_descends() {
        let mut s = store_with(0.0);
        let mut adam = Adam::new(&s, AdamConfig::default(), LrSchedule::Constant(1e-2));
        for _ in 0..50 {
            s.iter_mut().for_each(|p| p.grad.data_mut().copy_from_slice(&[2.0, -3.0]));
            adam.update(&mut s).unwrap();
        }
        let v = s.iter().next().unwrap().1.value.data().to_vec();
        assert!(v[0] < 0.0 && v[1] > 0.0);
    }

    #[test]
    fn exponential_decay_endpoints() {
        let s = LrSchedule::ExponentialDecay {
            initial: 1e-3,
            final_lr: 1e-5,
            steps: 30_000,
        };
        assert!((s.lr(1) - 1e-3).abs() < 1e-6);
        assert!((s.lr(15_000) - 1e-4).abs() < 1e-12);
        assert!((s.lr(30_000) - 1e-5).abs() < 1e-15);
        assert!((s.lr(90_000) - 1e-5).abs() < 1e-15);
    }

    #[test]
    fn warmup_peaks_at_warmup_step() {
        let s = LrSchedule::InverseSqrtWarmup {
            d_model: 384,
            warmup: 4000,
            scale: 1.0,
        };
        assert!(s.lr(4000) > s.lr(3999));
        assert!(s.lr(4000) > s.lr(4001));
        let peak = 384f64.powf(-0.5) * 4000f64.powf(-0.5);
        assert!((s.lr(4000) - peak).abs() < 1e-15);
    }

    #[test]
    fn mismatched_store_rejected() {
        let s = store_with(0.0);
        let adam_src = Adam::new(&s, AdamConfig::default(), LrSchedule::Constant(1e-3));
        let mut other = ParamStore::new();
        other.filled("w", &[3], 0.0);
        let mut adam = adam_src;
        assert!(adam.update(&mut other).is_err());
    }
}
