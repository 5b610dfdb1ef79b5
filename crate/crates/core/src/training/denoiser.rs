use ndarray::{Array1, Array2, Array3, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::schedule::NoiseSchedule;
use crate::adapter::{gelu, gelu_grad};
use crate::error::{shape_err, Result};

/// Everything the noise predictor sees for one example.
pub struct DenoiserInput<'a> {
    pub z_t: &'a Array3<f64>,
    /// 1-based timestep.
    pub t: usize,
    /// Latent of the source image being edited.
    pub source_latent: &'a Array3<f64>,
    /// Adapter conditioning, appended to the conditioning token sequence.
    pub c_e: &'a Array2<f64>,
}

/// A frozen noise predictor `ε_θ(z_t, t, E(c_i), c_e)`.
pub trait Denoiser: Send + Sync {
    fn predict(&self, input: &DenoiserInput<'_>) -> Result<Array3<f64>>;

    /// Vector–Jacobian product: `dL/dc_e` given `dL/dε̂`.
    fn grad_conditioning(&self, input: &DenoiserInput<'_>, d_eps: &Array3<f64>) -> Result<Array2<f64>>;

    /// Digest of all parameters.
    fn fingerprint(&self) -> String;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyDenoiserConfig {
    pub dim: usize,
    pub hidden: usize,
    pub latent_shape: (usize, usize, usize),
    /// Prior variance of the clean latent around the network's estimate.
    pub prior_var: f64,
    /// Output scale of the second layer.
    pub delta_scale: f64,
    pub seed: u64,
}

impl Default for ToyDenoiserConfig {
    fn default() -> Self {
        Self {
            dim: 32,
            hidden: 64,
            latent_shape: (4, 8, 8),
            prior_var: 0.01,
            delta_scale: 0.25,
            seed: 1234,
        }
    }
}

/// Small conditional residual network over `4 × 8 × 8` latents.
///
/// The conditioning sequence `[null; c_e]` is mean-pooled into a context
/// vector, a two-layer MLP maps it to a latent offset, and the clean latent
/// estimate is `E(c_i) + offset`. The noise estimate is the posterior mean of
/// `eps` under a Gaussian prior of variance `prior_var` around that estimate:
/// `ε̂ = s·(z_t − a·ẑ_0) / (a²σ² + s²)` with `a = √ᾱ_t`, `s = √(1 − ᾱ_t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyDenoiser {
    pub config: ToyDenoiserConfig,
    pub schedule: NoiseSchedule,
    null_token: Array1<f64>,
    w1: Array2<f64>,
    b1: Array1<f64>,
    w2: Array2<f64>,
}

struct Activations {
    pre: Array1<f64>,
    coef: f64,
    z0_coef: f64,
    rows: usize,
}

impl ToyDenoiser {
    pub fn new(config: ToyDenoiserConfig, schedule: NoiseSchedule) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (c, h, w) = config.latent_shape;
        let latent_len = c * h * w;
        let mut normal = |rows: usize, cols: usize, scale: f64| {
            Array2::from_shape_fn((rows, cols), |_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z * scale
            })
        };
        let null_token = normal(1, config.dim, 0.1).row(0).to_owned();
        let w1 = normal(config.dim, config.hidden, 2.0 / (config.dim as f64).sqrt());
        let b1 = normal(1, config.hidden, 0.1).row(0).to_owned();
        let w2 = normal(config.hidden, latent_len, config.delta_scale / (config.hidden as f64).sqrt());
        Self { config, schedule, null_token, w1, b1, w2 }
    }

    fn latent_len(&self) -> usize {
        let (c, h, w) = self.config.latent_shape;
        c * h * w
    }

    fn check(&self, input: &DenoiserInput<'_>) -> Result<()> {
        let shape = self.config.latent_shape;
        if input.z_t.dim() != shape || input.source_latent.dim() != shape {
            return Err(shape_err(format!(
                "latents {:?}/{:?} do not match {:?}",
                input.z_t.dim(),
                input.source_latent.dim(),
                shape
            )));
        }
        if input.c_e.ncols() != self.config.dim {
            return Err(shape_err(format!(
                "conditioning width {} does not match {}",
                input.c_e.ncols(),
                self.config.dim
            )));
        }
        Ok(())
    }

    fn context(&self, c_e: &Array2<f64>) -> Array1<f64> {
        (&self.null_token + &c_e.sum_axis(Axis(0))) / (c_e.nrows() + 1) as f64
    }

    /// Latent offset the network adds to the source for a given conditioning.
    pub fn offset(&self, c_e: &Array2<f64>) -> Array3<f64> {
        let hidden = (self.context(c_e).dot(&self.w1) + &self.b1).mapv(gelu);
        hidden
            .dot(&self.w2)
            .into_shape_with_order(self.config.latent_shape)
            .expect("w2 width equals latent size")
    }

    fn activations(&self, input: &DenoiserInput<'_>) -> Result<Activations> {
        self.check(input)?;
        let ab = self.schedule.alpha_bar(input.t)?;
        let (a, s) = (ab.sqrt(), (1.0 - ab).sqrt());
        let denom = a * a * self.config.prior_var + s * s;
        Ok(Activations {
            pre: self.context(input.c_e).dot(&self.w1) + &self.b1,
            coef: s / denom,
            z0_coef: a,
            rows: input.c_e.nrows(),
        })
    }
}

impl Denoiser for ToyDenoiser {
    fn predict(&self, input: &DenoiserInput<'_>) -> Result<Array3<f64>> {
        let act = self.activations(input)?;
        let offset = act
            .pre
            .mapv(gelu)
            .dot(&self.w2)
            .into_shape_with_order(self.config.latent_shape)
            .expect("w2 width equals latent size");
        let z0_hat = input.source_latent + &offset;
        Ok((input.z_t - &(z0_hat * act.z0_coef)) * act.coef)
    }

    fn grad_conditioning(&self, input: &DenoiserInput<'_>, d_eps: &Array3<f64>) -> Result<Array2<f64>> {
        let act = self.activations(input)?;
        if d_eps.dim() != self.config.latent_shape {
            return Err(shape_err("gradient shape does not match the latent"));
        }
        let d_offset = d_eps
            .to_shape(self.latent_len())
            .expect("contiguous latent")
            .mapv(|g| -g * act.coef * act.z0_coef);
        let d_pre = self.w2.dot(&d_offset) * act.pre.mapv(gelu_grad);
        let d_ctx = self.w1.dot(&d_pre) / (act.rows + 1) as f64;
        Ok(d_ctx.broadcast((act.rows, self.config.dim)).expect("1-D broadcast").to_owned())
    }

    fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(b"toy-denoiser");
        h.update(serde_json::to_vec(&self.config).expect("config serializes"));
        for b in self.schedule.betas() {
            h.update(b.to_le_bytes());
        }
        for v in self.null_token.iter().chain(&self.w1).chain(&self.b1).chain(&self.w2) {
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}
