use serde::{Deserialize, Serialize};

use super::ParamStore;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 8e-5,
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParamStore) -> Self {
        Self {
            config,
            step: 0,
            m: vec![0.0; params.len()],
            v: vec![0.0; params.len()],
        }
    }

    pub fn apply(&mut self, params: &mut ParamStore, grads: &ParamStore) -> Result<()> {
        if !params.same_layout(grads) || self.m.len() != params.len() {
            return Err(Error::Contract("gradient layout differs from parameters".into()));
        }
        if let Some(name) = grads.first_non_finite() {
            return Err(Error::Numerical(format!("non-finite gradient in {name}")));
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        let g = grads.data();
        for (i, p) in params.data_mut().iter_mut().enumerate() {
            let m = beta1 * self.m[i] + (1.0 - beta1) * g[i];
            let v = beta2 * self.v[i] + (1.0 - beta2) * g[i] * g[i];
            self.m[i] = m;
            self.v[i] = v;
            let m_hat = m / bc1;
            let v_hat = v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

/// Shadow copy of the parameters, `shadow = d * shadow + (1 - d) * param`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ema {
    pub decay: f64,
    pub shadow: ParamStore,
}

impl Ema {
    pub fn new(decay: f64, params: &ParamStore) -> Self {
        Self {
            decay,
            shadow: params.clone(),
        }
    }

    pub fn update(&mut self, params: &ParamStore) {
        let d = self.decay;
        for (s, &p) in self.shadow.data_mut().iter_mut().zip(params.data()) {
            *s = d * *s + (1.0 - d) * p;
        }
    }
}

/// Averages micro-batch gradients and steps the optimizer every `period`
/// pushes.
#[derive(Debug, Clone, PartialEq)]
pub struct GradAccumulator {
    pub period: usize,
    pub pending: usize,
    buffer: ParamStore,
}

impl GradAccumulator {
    pub fn new(period: usize, params: &ParamStore) -> Result<Self> {
        if period == 0 {
            return Err(Error::invalid("accumulation period must be >= 1"));
        }
        Ok(Self {
            period,
            pending: 0,
            buffer: params.zeros_like(),
        })
    }

    /// Adds one micro-batch gradient; returns true when an optimizer step was
    /// taken.
    pub fn push(&mut self, grads: &ParamStore, adam: &mut Adam, params: &mut ParamStore) -> Result<bool> {
        self.buffer.add_scaled(grads, 1.0);
        self.pending += 1;
        if self.pending < self.period {
            return Ok(false);
        }
        self.buffer.scale(1.0 / self.period as f64);
        let result = adam.apply(params, &self.buffer);
        self.buffer.fill(0.0);
        self.pending = 0;
        result.map(|_| true)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> ParamStore {
        let mut s = ParamStore::new();
        let id = s.add("w", 1, 1);
        s.slice_mut(id)[0] = v;
        s
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = scalar(0.7);
        let g = p.zeros_like();
        let mut adam = Adam::new(AdamConfig::default(), &p);
        for _ in 0..10 {
            adam.apply(&mut p, &g).unwrap();
        }
        assert_eq!(p.data()[0], 0.7);
        assert_eq!(adam.step, 10);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = scalar(0.0);
        let g = scalar(1.0);
        let cfg = AdamConfig::default();
        let mut adam = Adam::new(cfg, &p);
        adam.apply(&mut p, &g).unwrap();
        assert!((p.data()[0] + cfg.lr / (1.0 + cfg.eps)).abs() < 1e-18);
    }

    #[test]
    fn non_finite_gradient_names_tensor() {
        let mut p = scalar(0.0);
        let g = scalar(f64::INFINITY);
        let mut adam = Adam::new(AdamConfig::default(), &p);
        let err = adam.apply(&mut p, &g).unwrap_err().to_string();
        assert!(err.contains('w'), "{err}");
    }

    #[test]
    fn gradient_scale_keeps_update_sign() {
        for c in [1e-3, 1.0, 1e3] {
            let mut p = scalar(0.0);
            let mut adam = Adam::new(AdamConfig::default(), &p);
            adam.apply(&mut p, &scalar(-2.0 * c)).unwrap();
            assert!(p.data()[0] > 0.0);
        }
    }

    #[test]
    fn ema_fixed_point_and_geometric_sum() {
        let p = scalar(1.0);
        let mut ema = Ema::new(0.995, &p);
        ema.update(&p);
        assert_eq!(ema.shadow.data()[0], 1.0);

        let mut ema = Ema::new(0.995, &scalar(0.0));
        for n in 1..=200 {
            ema.update(&p);
            let want = 1.0 - 0.995f64.powi(n);
            assert!((ema.shadow.data()[0] - want).abs() < 1e-12);
        }

        let mut ema = Ema::new(0.0, &scalar(5.0));
        ema.update(&scalar(-3.0));
        assert_eq!(ema.shadow.data()[0], -3.0);
    }

    #[test]
    fn accumulation_counts_and_averages() {
        let mut p = scalar(0.0);
        let mut adam = Adam::new(AdamConfig::default(), &p);
        let mut acc = GradAccumulator::new(1, &p).unwrap();
        assert!(acc.push(&scalar(1.0), &mut adam, &mut p).unwrap());

        let mut p = scalar(0.0);
        let mut adam = Adam::new(AdamConfig::default(), &p);
        let mut acc = GradAccumulator::new(2, &p).unwrap();
        let steps = (0..5)
            .filter(|_| acc.push(&scalar(0.5), &mut adam, &mut p).unwrap())
            .count();
        assert_eq!(steps, 2);
        assert_eq!(adam.step, 2);
        // Mean of two identical 0.5 gradients is 0.5, so m = 0.1 * 0.5 after one step.
        let mut p = scalar(0.0);
        let mut adam = Adam::new(AdamConfig::default(), &p);
        let mut acc = GradAccumulator::new(2, &p).unwrap();
        acc.push(&scalar(0.5), &mut adam, &mut p).unwrap();
        acc.push(&scalar(0.5), &mut adam, &mut p).unwrap();
        assert!((adam.m[0] - 0.05).abs() < 1e-15);
        assert!(GradAccumulator::new(0, &p).is_err());
    }
}
