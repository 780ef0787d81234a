//! Adam with a step-decay learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{Gradients, ParamStore};

/// `lr(it) = initial * factor^floor(it / period)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepDecay {
    pub initial: f64,
    pub factor: f64,
    pub period: usize,
}

impl Default for StepDecay {
    fn default() -> Self {
        Self { initial: 1e-3, factor: 0.9, period: 1000 }
    }
}

impl StepDecay {
    pub fn lr_at(&self, iteration: usize) -> f64 {
        self.initial * self.factor.powi((iteration / self.period.max(1)) as i32)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moment estimates, one flat array per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub t: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &ParamStore, config: AdamConfig) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|(_, p)| vec![0.0; p.data.len()]).collect();
        Self { config, t: 0, m: zeros.clone(), v: zeros }
    }

    /// One bias-corrected Adam update. Non-finite gradients are rejected
    /// before anything is modified.
    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients, lr: f64) -> Result<()> {
        if let Some((id, i)) = grads.first_non_finite() {
            let name = &params.get(id)?.name;
            return Err(Error::NonFinite(format!("gradient of {name}[{i}]")));
        }
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(Error::size(format!(
                "optimizer tracks {} arrays, store has {}, gradients {}",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        let AdamConfig { beta1, beta2, eps } = self.config;
        self.t += 1;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for (id, p) in params.iter_mut() {
            let g = grads.get(id);
            let (m, v) = (&mut self.m[id.0], &mut self.v[id.0]);
            if g.len() != p.data.len() || m.len() != p.data.len() {
                return Err(Error::size(format!("gradient for {} has {} entries", p.name, g.len())));
            }
            for j in 0..g.len() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                p.data[j] -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamId;

    #[test]
    fn schedule_goldens() {
        let s = StepDecay::default();
        assert_eq!(s.lr_at(0), 1e-3);
        assert_eq!(s.lr_at(999), 1e-3);
        assert!((s.lr_at(1000) - 9e-4).abs() < 1e-18);
        assert!((s.lr_at(40_000) - 1e-3 * 0.9f64.powi(40)).abs() < 1e-18);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut store = ParamStore::new();
        store.register("p", vec![2], vec![1.0, -1.0]).unwrap();
        let mut adam = AdamState::new(&store, AdamConfig::default());
        let mut g = store.zeros_like();
        g.get_mut(ParamId(0)).copy_from_slice(&[0.5, -2.0]);
        adam.step(&mut store, &g, 0.1).unwrap();
        let d = store.data(ParamId(0));
        assert!((d[0] - 0.9).abs() < 1e-6);
        assert!((d[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn non_finite_gradient_leaves_state_untouched() {
        let mut store = ParamStore::new();
        store.register("w", vec![1], vec![2.0]).unwrap();
        let mut adam = AdamState::new(&store, AdamConfig::default());
        let mut g = store.zeros_like();
        g.get_mut(ParamId(0))[0] = f64::NAN;
        let before = (store.clone(), adam.clone());
        assert!(matches!(adam.step(&mut store, &g, 0.1), Err(Error::NonFinite(_))));
        assert_eq!((store, adam), before);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut store = ParamStore::new();
        store.register("p", vec![1], vec![0.0]).unwrap();
        let mut adam = AdamState::new(&store, AdamConfig::default());
        for _ in 0..5000 {
            let p = store.data(ParamId(0))[0];
            let mut g = store.zeros_like();
            g.get_mut(ParamId(0))[0] = 2.0 * (p - 3.0);
            adam.step(&mut store, &g, 1e-2).unwrap();
        }
        assert!((store.data(ParamId(0))[0] - 3.0).abs() < 1e-3);
    }
}
