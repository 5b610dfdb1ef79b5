use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdapterConfig {
    /// Rows of the learned emotion dictionary.
    pub num_queries: usize,
    /// Model width shared by queries, emotion tokens and image tokens.
    pub dim: usize,
    pub num_blocks: usize,
    pub num_heads: usize,
    /// Residual + layer norm + feed-forward around each attention pair.
    /// When off, a block is exactly self-attention followed by cross-attention.
    pub residual: bool,
    pub ffn_mult: usize,
    pub query_init_std: f64,
    pub layer_norm_eps: f64,
}

impl Default for AdapterConfig {
    fn default() -> Self {
        Self {
            num_queries: 8,
            dim: 32,
            num_blocks: 4,
            num_heads: 4,
            residual: true,
            ffn_mult: 2,
            query_init_std: 0.02,
            layer_norm_eps: 1e-5,
        }
    }
}

impl AdapterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_queries == 0 || self.dim == 0 || self.num_blocks == 0 || self.num_heads == 0 {
            return Err(invalid("adapter sizes must be positive"));
        }
        if self.dim % self.num_heads != 0 {
            return Err(invalid(format!(
                "dim {} is not divisible by num_heads {}",
                self.dim, self.num_heads
            )));
        }
        if self.residual && self.ffn_mult == 0 {
            return Err(invalid("ffn_mult must be positive when residual blocks are enabled"));
        }
        Ok(())
    }

    /// Key dimension per head.
    pub fn key_dim(&self) -> usize {
        self.dim / self.num_heads
    }

    pub fn ffn_dim(&self) -> usize {
        self.dim * self.ffn_mult
    }

    pub fn param_count(&self) -> usize {
        let d = self.dim;
        let attn = 6 * d * d;
        let residual = if self.residual {
            let h = self.ffn_dim();
            3 * 2 * d + d * h + h + h * d + d
        } else {
            0
        };
        self.num_queries * d + self.num_blocks * (attn + residual)
    }
}

/// Layer norms and feed-forward for the residual block variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualParams {
    pub ln_self_gamma: Array2<f64>,
    pub ln_self_beta: Array2<f64>,
    pub ln_cross_gamma: Array2<f64>,
    pub ln_cross_beta: Array2<f64>,
    pub ln_ffn_gamma: Array2<f64>,
    pub ln_ffn_beta: Array2<f64>,
    pub ffn_w1: Array2<f64>,
    pub ffn_b1: Array2<f64>,
    pub ffn_w2: Array2<f64>,
    pub ffn_b2: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockParams {
    pub self_q: Array2<f64>,
    pub self_k: Array2<f64>,
    pub self_v: Array2<f64>,
    pub cross_q: Array2<f64>,
    pub cross_k: Array2<f64>,
    pub cross_v: Array2<f64>,
    pub residual: Option<ResidualParams>,
}

/// Learned queries plus per-block weights. Vectors (biases, norm scales)
/// are stored as `1 × n` matrices so every tensor shares one type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterParams {
    pub config: AdapterConfig,
    pub queries: Array2<f64>,
    pub blocks: Vec<BlockParams>,
}

fn fan_in_uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    let bound = 1.0 / (rows as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    Array2::from_shape_fn((rows, cols), |_| dist.sample(rng))
}

impl AdapterParams {
    /// Queries from N(0, query_init_std²); projections fan-in scaled uniform;
    /// norm scales at one and biases at zero.
    pub fn init(config: AdapterConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.dim;
        let normal = Normal::new(0.0, config.query_init_std).map_err(|e| invalid(e.to_string()))?;
        let queries = Array2::from_shape_fn((config.num_queries, d), |_| normal.sample(&mut rng));
        let blocks = (0..config.num_blocks)
            .map(|_| {
                let mut block = BlockParams {
                    self_q: fan_in_uniform(&mut rng, d, d),
                    self_k: fan_in_uniform(&mut rng, d, d),
                    self_v: fan_in_uniform(&mut rng, d, d),
                    cross_q: fan_in_uniform(&mut rng, d, d),
                    cross_k: fan_in_uniform(&mut rng, d, d),
                    cross_v: fan_in_uniform(&mut rng, d, d),
                    residual: None,
                };
                if config.residual {
                    let h = config.ffn_dim();
                    block.residual = Some(ResidualParams {
                        ln_self_gamma: Array2::ones((1, d)),
                        ln_self_beta: Array2::zeros((1, d)),
                        ln_cross_gamma: Array2::ones((1, d)),
                        ln_cross_beta: Array2::zeros((1, d)),
                        ln_ffn_gamma: Array2::ones((1, d)),
                        ln_ffn_beta: Array2::zeros((1, d)),
                        ffn_w1: fan_in_uniform(&mut rng, d, h),
                        ffn_b1: Array2::zeros((1, h)),
                        ffn_w2: fan_in_uniform(&mut rng, h, d),
                        ffn_b2: Array2::zeros((1, d)),
                    });
                }
                block
            })
            .collect();
        Ok(Self { config, queries, blocks })
    }

    /// Same shapes as `self`, every entry zero. Used as a gradient buffer.
    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        out.for_each_tensor_mut(|_, t| t.fill(0.0));
        out
    }

    /// Identity projections, zero queries, and (if present) unit norms with a
    /// zero feed-forward.
    pub fn identity(config: AdapterConfig) -> Result<Self> {
        let mut params = Self::init(config, 0)?;
        let d = params.config.dim;
        params.queries.fill(0.0);
        for block in &mut params.blocks {
            for w in [
                &mut block.self_q,
                &mut block.self_k,
                &mut block.self_v,
                &mut block.cross_q,
                &mut block.cross_k,
                &mut block.cross_v,
            ] {
                *w = Array2::eye(d);
            }
            if let Some(r) = block.residual.as_mut() {
                r.ffn_w1.fill(0.0);
                r.ffn_w2.fill(0.0);
            }
        }
        Ok(params)
    }

    /// Every tensor with a stable dotted name, in a fixed order.
    pub fn tensors(&self) -> Vec<(String, &Array2<f64>)> {
        let mut out = vec![("queries".to_string(), &self.queries)];
        for (i, b) in self.blocks.iter().enumerate() {
            let mut push = |n: &str, t| out.push((format!("blocks.{i}.{n}"), t));
            push("self_q", &b.self_q);
            push("self_k", &b.self_k);
            push("self_v", &b.self_v);
            push("cross_q", &b.cross_q);
            push("cross_k", &b.cross_k);
            push("cross_v", &b.cross_v);
            if let Some(r) = &b.residual {
                push("ln_self_gamma", &r.ln_self_gamma);
                push("ln_self_beta", &r.ln_self_beta);
                push("ln_cross_gamma", &r.ln_cross_gamma);
                push("ln_cross_beta", &r.ln_cross_beta);
                push("ln_ffn_gamma", &r.ln_ffn_gamma);
                push("ln_ffn_beta", &r.ln_ffn_beta);
                push("ffn_w1", &r.ffn_w1);
                push("ffn_b1", &r.ffn_b1);
                push("ffn_w2", &r.ffn_w2);
                push("ffn_b2", &r.ffn_b2);
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Array2<f64>)> {
        let mut out = vec![("queries".to_string(), &mut self.queries)];
        for (i, b) in self.blocks.iter_mut().enumerate() {
            let mut push = |n: &str, t| out.push((format!("blocks.{i}.{n}"), t));
            push("self_q", &mut b.self_q);
            push("self_k", &mut b.self_k);
            push("self_v", &mut b.self_v);
            push("cross_q", &mut b.cross_q);
            push("cross_k", &mut b.cross_k);
            push("cross_v", &mut b.cross_v);
            if let Some(r) = b.residual.as_mut() {
                push("ln_self_gamma", &mut r.ln_self_gamma);
                push("ln_self_beta", &mut r.ln_self_beta);
                push("ln_cross_gamma", &mut r.ln_cross_gamma);
                push("ln_cross_beta", &mut r.ln_cross_beta);
                push("ln_ffn_gamma", &mut r.ln_ffn_gamma);
                push("ln_ffn_beta", &mut r.ln_ffn_beta);
                push("ffn_w1", &mut r.ffn_w1);
                push("ffn_b1", &mut r.ffn_b1);
                push("ffn_w2", &mut r.ffn_w2);
                push("ffn_b2", &mut r.ffn_b2);
            }
        }
        out
    }

    pub fn for_each_tensor_mut(&mut self, mut f: impl FnMut(&str, &mut Array2<f64>)) {
        for (name, t) in self.tensors_mut() {
            f(&name, t);
        }
    }

    /// Visit matching tensors of `self` and `other`, which must share a config.
    pub fn zip_tensors_mut(&mut self, other: &Self, mut f: impl FnMut(&str, &mut Array2<f64>, &Array2<f64>)) {
        let theirs = other.tensors();
        for ((name, mine), (_, theirs)) in self.tensors_mut().into_iter().zip(theirs) {
            f(&name, mine, theirs);
        }
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn tensor_names(&self) -> Vec<String> {
        self.tensors().into_iter().map(|(n, _)| n).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }

    /// Random perturbation used by tests to move away from the symmetric init.
    pub fn jitter(&mut self, scale: f64, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.for_each_tensor_mut(|_, t| t.mapv_inplace(|v| v + scale * (rng.random::<f64>() - 0.5)));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heads_must_divide_dim() {
        let cfg = AdapterConfig { dim: 30, num_heads: 4, ..Default::default() };
        assert!(AdapterParams::init(cfg, 1).is_err());
        let cfg = AdapterConfig { dim: 32, num_heads: 4, ..Default::default() };
        assert_eq!(cfg.key_dim(), 8);
    }

    #[test]
    fn param_count_matches_allocation() {
        for residual in [false, true] {
            for (nq, d, blocks, heads) in [(8, 32, 4, 4), (2, 4, 1, 2), (5, 12, 3, 3)] {
                let cfg = AdapterConfig {
                    num_queries: nq,
                    dim: d,
                    num_blocks: blocks,
                    num_heads: heads,
                    residual,
                    ..Default::default()
                };
                let p = AdapterParams::init(cfg.clone(), 7).unwrap();
                assert_eq!(p.num_params(), cfg.param_count());
            }
        }
    }

    #[test]
    fn init_is_seeded() {
        let cfg = AdapterConfig::default();
        let a = AdapterParams::init(cfg.clone(), 3).unwrap();
        let b = AdapterParams::init(cfg.clone(), 3).unwrap();
        let c = AdapterParams::init(cfg, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.is_finite());
        let std = (a.queries.iter().map(|v| v * v).sum::<f64>() / a.queries.len() as f64).sqrt();
        assert!(std > 0.01 && std < 0.03, "query std {std}");
    }
}
