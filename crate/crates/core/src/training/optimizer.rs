use serde::{Deserialize, Serialize};

use crate::adapter::AdapterParams;
use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate >= 0.0
            && self.learning_rate.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(invalid(format!("invalid optimizer settings {self:?}")))
        }
    }
}

/// First and second moment estimates, shaped like the adapter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamWState {
    pub first_moment: AdapterParams,
    pub second_moment: AdapterParams,
    pub updates: u64,
}

impl AdamWState {
    pub fn new(params: &AdapterParams) -> Self {
        Self { first_moment: params.zeros_like(), second_moment: params.zeros_like(), updates: 0 }
    }

    /// One decoupled-weight-decay Adam update of `params` in place.
    pub fn apply(&mut self, cfg: &AdamWConfig, params: &mut AdapterParams, grads: &AdapterParams) {
        self.updates += 1;
        let t = self.updates as i32;
        let bias1 = 1.0 - cfg.beta1.powi(t);
        let bias2 = 1.0 - cfg.beta2.powi(t);
        self.first_moment.zip_tensors_mut(grads, |_, m, g| {
            m.zip_mut_with(g, |m, g| *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g);
        });
        self.second_moment.zip_tensors_mut(grads, |_, v, g| {
            v.zip_mut_with(g, |v, g| *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g);
        });
        if cfg.learning_rate == 0.0 {
            return;
        }
        let moments: Vec<_> = self
            .first_moment
            .tensors()
            .into_iter()
            .zip(self.second_moment.tensors())
            .map(|((_, m), (_, v))| (m, v))
            .collect();
        for ((_, p), (m, v)) in params.tensors_mut().into_iter().zip(moments) {
            ndarray::Zip::from(p).and(m).and(v).for_each(|p, m, v| {
                let step = (m / bias1) / ((v / bias2).sqrt() + cfg.eps) + cfg.weight_decay * *p;
                *p -= cfg.learning_rate * step;
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapter::AdapterConfig;

    fn small() -> AdapterParams {
        let cfg = AdapterConfig { num_queries: 2, dim: 4, num_blocks: 1, num_heads: 2, ..Default::default() };
        AdapterParams::init(cfg, 3).unwrap()
    }

    #[test]
    fn first_step_moves_each_weight_by_learning_rate() {
        let mut p = small();
        let before = p.clone();
        let mut g = p.zeros_like();
        g.for_each_tensor_mut(|_, t| t.fill(0.5));
        let cfg = AdamWConfig { learning_rate: 0.01, weight_decay: 0.0, ..Default::default() };
        let mut st = AdamWState::new(&p);
        st.apply(&cfg, &mut p, &g);
        for ((_, a), (_, b)) in p.tensors().into_iter().zip(before.tensors()) {
            for (x, y) in a.iter().zip(b.iter()) {
                assert!((y - x - 0.01).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn zero_learning_rate_leaves_params_untouched() {
        let mut p = small();
        let before = p.clone();
        let mut g = p.zeros_like();
        g.for_each_tensor_mut(|_, t| t.fill(-3.0));
        let cfg = AdamWConfig { learning_rate: 0.0, ..Default::default() };
        let mut st = AdamWState::new(&p);
        st.apply(&cfg, &mut p, &g);
        assert_eq!(p, before);
    }

    #[test]
    fn weight_decay_shrinks_without_gradient() {
        let mut p = small();
        let before = p.clone();
        let g = p.zeros_like();
        let cfg = AdamWConfig { learning_rate: 0.1, weight_decay: 0.5, ..Default::default() };
        AdamWState::new(&p).apply(&cfg, &mut p, &g);
        let (_, a) = &p.tensors()[0];
        let (_, b) = &before.tensors()[0];
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y * 0.95).abs() < 1e-12);
        }
    }
}
