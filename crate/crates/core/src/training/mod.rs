//! Adapter training against a frozen denoiser with the combined
//! noise-prediction and instruction objective.

mod denoiser;
pub mod fixtures;
mod losses;
mod optimizer;
mod schedule;

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;

use image::RgbImage;
use ndarray::{Array1, Array2, Array3};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use denoiser::{Denoiser, DenoiserInput, ToyDenoiser, ToyDenoiserConfig};
pub use losses::{broadcast_target, instruction_loss, instruction_loss_against, instruction_loss_grad, mean_squared_error};
pub use optimizer::{AdamWConfig, AdamWState};
pub use schedule::{add_noise, noise_with_alpha_bar, NoiseSchedule};

use crate::adapter::{AdapterParams, EmotionEmbedding, ImageEmbedding};
use crate::emotion::EmotionLabel;
use crate::error::{invalid, shape_err, Error, Result};
use crate::providers::{hash_seed, ProviderSuite};

/// One training pair with every provider output precomputed.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub id: String,
    pub emotion: EmotionLabel,
    pub emotion_tokens: EmotionEmbedding,
    pub image_tokens: ImageEmbedding,
    pub source_latent: Array3<f64>,
    pub target_latent: Array3<f64>,
    pub instruction: String,
    /// Pooled text embedding of the instruction.
    pub instruction_embedding: Array1<f64>,
}

impl TrainingExample {
    pub fn encode(
        id: impl Into<String>,
        source: &RgbImage,
        target: &RgbImage,
        emotion: EmotionLabel,
        instruction: &str,
        suite: &ProviderSuite,
    ) -> Result<Self> {
        if instruction.trim().is_empty() {
            return Err(invalid("training pairs need a non-empty instruction"));
        }
        let source_latent = suite.latent_codec.encode_latent(source)?;
        let target_latent = suite.latent_codec.encode_latent(target)?;
        if source_latent.dim() != target_latent.dim() {
            return Err(shape_err("source and target latents differ in shape"));
        }
        Ok(Self {
            id: id.into(),
            emotion,
            emotion_tokens: EmotionEmbedding::new(suite.text_encoder.encode(emotion.word())?.tokens)?,
            image_tokens: ImageEmbedding::new(suite.image_encoder.encode_image(source)?.tokens)?,
            source_latent,
            target_latent,
            instruction: instruction.to_string(),
            instruction_embedding: suite.text_encoder.encode(instruction)?.pooled,
        })
    }
}

/// One sampled `(t, eps)` for the forward process.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseDraw {
    pub t: usize,
    pub eps: Array3<f64>,
}

impl NoiseDraw {
    pub fn sample(rng: &mut ChaCha8Rng, shape: (usize, usize, usize), timesteps: usize) -> Self {
        let t = Uniform::new_inclusive(1, timesteps).expect("timesteps ≥ 1").sample(rng);
        let eps = Array3::from_shape_simple_fn(shape, || StandardNormal.sample(rng));
        Self { t, eps }
    }
}

fn predict_for(
    ex: &TrainingExample,
    draw: &NoiseDraw,
    c_e: &Array2<f64>,
    denoiser: &dyn Denoiser,
    schedule: &NoiseSchedule,
) -> Result<(Array3<f64>, Array3<f64>)> {
    let z_t = add_noise(&ex.target_latent, draw.t, &draw.eps, schedule)?;
    let pred = denoiser.predict(&DenoiserInput { z_t: &z_t, t: draw.t, source_latent: &ex.source_latent, c_e })?;
    Ok((z_t, pred))
}

/// Noise-prediction error `‖eps − ε_θ(z_t, t, E(c_i), c_e)‖²` averaged over
/// elements, examples and `samples_per_example` draws each.
pub fn diffusion_loss(
    batch: &[TrainingExample],
    denoiser: &dyn Denoiser,
    adapter: &AdapterParams,
    schedule: &NoiseSchedule,
    samples_per_example: usize,
    seed: u64,
) -> Result<f64> {
    if batch.is_empty() || samples_per_example == 0 {
        return Err(invalid("diffusion loss needs at least one sample"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for ex in batch {
        let c_e = adapter.forward(&ex.emotion_tokens, &ex.image_tokens)?.into_inner();
        for _ in 0..samples_per_example {
            let draw = NoiseDraw::sample(&mut rng, ex.target_latent.dim(), schedule.len());
            let (_, pred) = predict_for(ex, &draw, &c_e, denoiser, schedule)?;
            total += mean_squared_error(&pred, &draw.eps)?;
        }
    }
    Ok(total / (batch.len() * samples_per_example) as f64)
}

/// Batch losses and the adapter gradient of `L_LDM + λ·L_ins`.
pub struct StepGradients {
    pub grads: AdapterParams,
    pub ldm: f64,
    pub ins: f64,
}

pub fn compute_gradients(
    adapter: &AdapterParams,
    batch: &[TrainingExample],
    draws: &[NoiseDraw],
    denoiser: &dyn Denoiser,
    schedule: &NoiseSchedule,
    lambda_ins: f64,
) -> Result<StepGradients> {
    if batch.is_empty() {
        return Err(invalid("empty batch"));
    }
    if batch.len() != draws.len() {
        return Err(shape_err(format!("{} examples but {} noise draws", batch.len(), draws.len())));
    }
    let scale = 1.0 / batch.len() as f64;
    let per_example: Vec<Result<(AdapterParams, f64, f64)>> = batch
        .par_iter()
        .zip(draws.par_iter())
        .map(|(ex, draw)| {
            let (c_e, tape) = adapter.forward_tape(&ex.emotion_tokens, &ex.image_tokens)?;
            let c_e = c_e.into_inner();
            let (z_t, pred) = predict_for(ex, draw, &c_e, denoiser, schedule)?;
            let ldm = mean_squared_error(&pred, &draw.eps)?;
            let ins = instruction_loss_against(&c_e, &ex.instruction_embedding)?;
            let d_pred = (&pred - &draw.eps) * (2.0 * scale / pred.len() as f64);
            let input = DenoiserInput { z_t: &z_t, t: draw.t, source_latent: &ex.source_latent, c_e: &c_e };
            let mut d_ce = denoiser.grad_conditioning(&input, &d_pred)?;
            if lambda_ins != 0.0 {
                d_ce.scaled_add(lambda_ins * scale, &instruction_loss_grad(&c_e, &ex.instruction_embedding));
            }
            Ok((adapter.backward(&tape, &d_ce)?, ldm, ins))
        })
        .collect();
    let mut grads = adapter.zeros_like();
    let (mut ldm, mut ins) = (0.0, 0.0);
    for r in per_example {
        let (g, l, i) = r?;
        grads.zip_tensors_mut(&g, |_, acc, g| *acc += g);
        ldm += l * scale;
        ins += i * scale;
    }
    Ok(StepGradients { grads, ldm, ins })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Weight of the instruction loss.
    pub lambda_ins: f64,
    pub optimizer: AdamWConfig,
    pub batch_size: usize,
    pub steps: u64,
    pub timesteps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_ins: 0.5,
            optimizer: AdamWConfig::default(),
            batch_size: 8,
            steps: 200,
            timesteps: 1000,
            beta_start: 1e-4,
            beta_end: 2e-2,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_ins >= 0.0 && self.lambda_ins.is_finite()) {
            return Err(invalid(format!("lambda_ins must be ≥ 0, got {}", self.lambda_ins)));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch_size must be positive"));
        }
        self.optimizer.validate()?;
        self.schedule().map(|_| ())
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.timesteps, self.beta_start, self.beta_end)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: u64,
    pub ldm: f64,
    pub ins: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub config: TrainConfig,
    pub adapter: AdapterParams,
    pub optimizer: AdamWState,
    pub step: u64,
    pub backbone_fingerprint: String,
    pub loss_history: Vec<LossRecord>,
}

impl TrainState {
    pub fn new(config: TrainConfig, adapter: AdapterParams, denoiser: &dyn Denoiser) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            optimizer: AdamWState::new(&adapter),
            config,
            adapter,
            step: 0,
            backbone_fingerprint: denoiser.fingerprint(),
            loss_history: Vec::new(),
        })
    }

    pub fn lambda_ins(&self) -> f64 {
        self.config.lambda_ins
    }

    fn step_seed(&self, purpose: &[u8]) -> u64 {
        hash_seed(&[b"train", purpose, &self.config.seed.to_le_bytes(), &self.step.to_le_bytes()])
    }

    /// Indices of the examples used at the current step.
    pub fn batch_indices(&self, dataset_len: usize) -> Vec<usize> {
        if dataset_len <= self.config.batch_size {
            return (0..dataset_len).collect();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.step_seed(b"batch"));
        let mut idx = sample(&mut rng, dataset_len, self.config.batch_size).into_vec();
        idx.sort_unstable();
        idx
    }

    /// Noise draws for the current step, one per batch element.
    pub fn noise_draws(&self, batch: &[TrainingExample]) -> Vec<NoiseDraw> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.step_seed(b"noise"));
        batch
            .iter()
            .map(|ex| NoiseDraw::sample(&mut rng, ex.target_latent.dim(), self.config.timesteps))
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut w, self)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        serde_json::from_slice(&bytes).map_err(|e| Error::Corrupt { path: path.to_path_buf(), message: e.to_string() })
    }
}

/// One update on `batch` with a fresh noise draw derived from `(seed, step)`.
pub fn train_step(
    state: &TrainState,
    batch: &[TrainingExample],
    denoiser: &dyn Denoiser,
    schedule: &NoiseSchedule,
) -> Result<TrainState> {
    let fingerprint = denoiser.fingerprint();
    if fingerprint != state.backbone_fingerprint {
        return Err(invalid(format!(
            "denoiser fingerprint changed from {} to {fingerprint}",
            state.backbone_fingerprint
        )));
    }
    if schedule.len() != state.config.timesteps {
        return Err(invalid("schedule length does not match the training config"));
    }
    let draws = state.noise_draws(batch);
    let g = compute_gradients(&state.adapter, batch, &draws, denoiser, schedule, state.config.lambda_ins)?;
    let total = g.ldm + state.config.lambda_ins * g.ins;
    if !total.is_finite() || !g.grads.is_finite() {
        return Err(Error::NonFiniteLoss { step: state.step, ldm: g.ldm, ins: g.ins });
    }
    let mut next = state.clone();
    next.optimizer.apply(&state.config.optimizer, &mut next.adapter, &g.grads);
    next.loss_history.push(LossRecord { step: state.step, ldm: g.ldm, ins: g.ins, total });
    next.step += 1;
    Ok(next)
}

/// Appends each step's losses to a line-delimited log.
pub struct TrainLog {
    file: BufWriter<File>,
}

impl TrainLog {
    pub fn append(path: &Path) -> Result<Self> {
        Ok(Self { file: BufWriter::new(OpenOptions::new().create(true).append(true).open(path)?) })
    }

    pub fn write(&mut self, rec: &LossRecord) -> Result<()> {
        serde_json::to_writer(&mut self.file, rec)?;
        self.file.write_all(b"\n")?;
        self.file.flush()?;
        Ok(())
    }
}

/// Runs `steps` updates, sampling batches from `dataset`. A non-finite loss
/// aborts the run; if `snapshot_dir` is given the last good state is written
/// there first.
pub fn train(
    mut state: TrainState,
    dataset: &[TrainingExample],
    denoiser: &dyn Denoiser,
    steps: u64,
    mut log: Option<&mut TrainLog>,
    snapshot_dir: Option<&Path>,
) -> Result<TrainState> {
    if dataset.is_empty() {
        return Err(invalid("training set is empty"));
    }
    let schedule = state.config.schedule()?;
    for _ in 0..steps {
        let batch: Vec<TrainingExample> =
            state.batch_indices(dataset.len()).into_iter().map(|i| dataset[i].clone()).collect();
        match train_step(&state, &batch, denoiser, &schedule) {
            Ok(next) => state = next,
            Err(e @ Error::NonFiniteLoss { .. }) => {
                if let Some(dir) = snapshot_dir {
                    let path = dir.join(format!("diagnostic-step-{}.json", state.step));
                    state.save(&path)?;
                    tracing::error!(path = %path.display(), "{e}; wrote snapshot");
                }
                return Err(e);
            }
            Err(e) => return Err(e),
        }
        if let (Some(log), Some(rec)) = (log.as_deref_mut(), state.loss_history.last()) {
            log.write(rec)?;
        }
    }
    Ok(state)
}

/// Mean total loss over a window of the history, or `None` if too short.
pub fn moving_average(history: &[LossRecord], start: usize, window: usize) -> Option<f64> {
    let w = history.get(start..start + window)?;
    Some(w.iter().map(|r| r.total).sum::<f64>() / window as f64)
}
