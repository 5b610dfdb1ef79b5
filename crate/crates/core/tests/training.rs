mod common;

use emoforge_core::adapter::{AdapterConfig, AdapterParams};
use emoforge_core::providers::{ProviderSuite, SuiteSettings};
use emoforge_core::training::fixtures::synthetic_training_set;
use emoforge_core::training::{
    add_noise, compute_gradients, diffusion_loss, instruction_loss_against, instruction_loss_grad, moving_average,
    train, train_step, AdamWConfig, Denoiser, DenoiserInput, NoiseDraw, NoiseSchedule, ToyDenoiser,
    ToyDenoiserConfig, TrainConfig, TrainLog, TrainState, TrainingExample,
};
use emoforge_core::{Error, Result};
use ndarray::{array, Array1, Array2, Array3};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn schedule(t: usize) -> NoiseSchedule {
    NoiseSchedule::linear(t, 1e-4, 2e-2).unwrap()
}

fn max_diff(a: &Array3<f64>, b: &Array3<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn forward_noising_matches_closed_form() {
    let s = schedule(1000);
    let mut rng = common::rng(1);
    let z0 = Array3::from_shape_fn((2, 3, 3), |(c, y, x)| (c + y * 3 + x) as f64 / 10.0 - 0.5);
    let eps = NoiseDraw::sample(&mut rng, (2, 3, 3), 10).eps;
    for t in [1, 17, 500, 1000] {
        let ab: f64 = (0..t).map(|i| 1.0 - (1e-4 + (2e-2 - 1e-4) * i as f64 / 999.0)).product();
        let want = &z0 * ab.sqrt() + &eps * (1.0 - ab).sqrt();
        let got = add_noise(&z0, t, &eps, &s).unwrap();
        assert!(max_diff(&got, &want) < 1e-12, "t={t}");
    }
    // almost clean at the first step, almost pure noise at the last
    let first = add_noise(&z0, 1, &eps, &s).unwrap();
    assert!(max_diff(&first, &z0) < 0.05);
    let last = add_noise(&z0, 1000, &eps, &s).unwrap();
    assert!(max_diff(&last, &eps) < 0.01);
    assert!(add_noise(&z0, 0, &eps, &s).is_err());
    assert!(add_noise(&z0, 1001, &eps, &s).is_err());
}

/// Recovers the exact noise when the clean latent equals the source latent.
struct ExactDenoiser(NoiseSchedule);

/// Predicts zero noise everywhere.
struct ZeroDenoiser;

impl Denoiser for ExactDenoiser {
    fn predict(&self, i: &DenoiserInput<'_>) -> Result<Array3<f64>> {
        let ab = self.0.alpha_bar(i.t)?;
        Ok((i.z_t - &(i.source_latent * ab.sqrt())) / (1.0 - ab).sqrt())
    }
    fn grad_conditioning(&self, i: &DenoiserInput<'_>, _: &Array3<f64>) -> Result<Array2<f64>> {
        Ok(Array2::zeros(i.c_e.dim()))
    }
    fn fingerprint(&self) -> String {
        "exact".into()
    }
}

impl Denoiser for ZeroDenoiser {
    fn predict(&self, i: &DenoiserInput<'_>) -> Result<Array3<f64>> {
        Ok(Array3::zeros(i.z_t.dim()))
    }
    fn grad_conditioning(&self, i: &DenoiserInput<'_>, _: &Array3<f64>) -> Result<Array2<f64>> {
        Ok(Array2::zeros(i.c_e.dim()))
    }
    fn fingerprint(&self) -> String {
        "zero".into()
    }
}

fn suite() -> ProviderSuite {
    ProviderSuite::mock(SuiteSettings::default())
}

fn toy(timesteps: usize) -> ToyDenoiser {
    ToyDenoiser::new(ToyDenoiserConfig::default(), schedule(timesteps))
}

fn examples(timesteps: usize, sources: usize) -> Vec<TrainingExample> {
    synthetic_training_set(&suite(), &toy(timesteps), 8, sources, 0).unwrap()
}

fn adapter() -> AdapterParams {
    AdapterParams::init(AdapterConfig::default(), 3).unwrap()
}

#[test]
fn diffusion_loss_of_exact_predictor_is_zero() {
    let mut batch = examples(100, 1);
    batch.truncate(3);
    for ex in &mut batch {
        ex.target_latent = ex.source_latent.clone();
    }
    let l = diffusion_loss(&batch, &ExactDenoiser(schedule(100)), &adapter(), &schedule(100), 5, 0).unwrap();
    assert!(l < 1e-20, "{l}");
}

#[test]
fn diffusion_loss_of_zero_predictor_is_noise_variance() {
    let batch = vec![examples(100, 1).remove(0)];
    // 40 draws × 256 latent elements ≈ 10k unit-variance samples
    let l = diffusion_loss(&batch, &ZeroDenoiser, &adapter(), &schedule(100), 40, 11).unwrap();
    assert!((l - 1.0).abs() < 0.05, "{l}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn diffusion_loss_is_non_negative(seed in any::<u64>()) {
        let batch = examples(50, 1);
        let l = diffusion_loss(&batch[..2], &toy(50), &adapter(), &schedule(50), 1, seed).unwrap();
        prop_assert!(l >= 0.0 && l.is_finite());
    }

    #[test]
    fn instruction_loss_scales_quadratically(
        c in prop::collection::vec(-2.0f64..2.0, 6),
        p in prop::collection::vec(-2.0f64..2.0, 3),
        k in -3.0f64..3.0,
    ) {
        let c = Array2::from_shape_vec((2, 3), c).unwrap();
        let p = Array1::from(p);
        let base = instruction_loss_against(&c, &p).unwrap();
        let scaled = instruction_loss_against(&(&c * k), &(&p * k)).unwrap();
        prop_assert!((scaled - k * k * base).abs() <= 1e-10 * (1.0 + base));
        prop_assert!(base >= 0.0);
    }
}

#[test]
fn instruction_loss_examples() {
    let p = array![0.3, -0.2, 0.9];
    let c = ndarray::stack![ndarray::Axis(0), p.view(), p.view()];
    assert_eq!(instruction_loss_against(&c, &p).unwrap(), 0.0);
    assert_eq!(instruction_loss_against(&array![[1.0, 0.0]], &array![0.0, 1.0]).unwrap(), 1.0);
    assert!(instruction_loss_against(&array![[1.0, 0.0]], &array![0.0, 1.0, 0.0]).is_err());
}

#[test]
fn instruction_gradient_matches_finite_differences() {
    let mut rng = common::rng(5);
    let c = common::random_matrix(&mut rng, 3, 4, 1.0);
    let p = Array1::from(common::random_matrix(&mut rng, 1, 4, 1.0).row(0).to_vec());
    let g = instruction_loss_grad(&c, &p);
    let h = 1e-6;
    for ((r, k), &analytic) in g.indexed_iter() {
        let (mut up, mut dn) = (c.clone(), c.clone());
        up[[r, k]] += h;
        dn[[r, k]] -= h;
        let fd = (instruction_loss_against(&up, &p).unwrap() - instruction_loss_against(&dn, &p).unwrap()) / (2.0 * h);
        assert!((fd - analytic).abs() < 1e-8);
    }
}

fn draws_for(batch: &[TrainingExample], timesteps: usize, seed: u64) -> Vec<NoiseDraw> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    batch.iter().map(|ex| NoiseDraw::sample(&mut rng, ex.target_latent.dim(), timesteps)).collect()
}

#[test]
fn total_gradient_is_linear_in_the_instruction_weight() {
    let batch = examples(50, 1);
    let batch = &batch[..4];
    let draws = draws_for(batch, 50, 2);
    let (p, den, s) = (adapter(), toy(50), schedule(50));
    let g0 = compute_gradients(&p, batch, &draws, &den, &s, 0.0).unwrap();
    let g1 = compute_gradients(&p, batch, &draws, &den, &s, 1.0).unwrap();
    let g3 = compute_gradients(&p, batch, &draws, &den, &s, 0.3).unwrap();
    assert_eq!(g0.ldm, g1.ldm);
    for ((name, a), ((_, b), (_, c))) in g0.grads.tensors().into_iter().zip(g1.grads.tensors().into_iter().zip(g3.grads.tensors())) {
        let want = a + &((b - a) * 0.3);
        let scale = want.iter().fold(1e-12f64, |m, v| m.max(v.abs()));
        let worst = (&want - c).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(worst <= 1e-9 * scale, "{name}: {worst}");
    }
}

#[test]
fn pure_diffusion_gradient_matches_finite_differences() {
    let batch = examples(50, 1);
    let batch = &batch[..2];
    let draws = draws_for(batch, 50, 4);
    let (p, den, s) = (adapter(), toy(50), schedule(50));
    let g = compute_gradients(&p, batch, &draws, &den, &s, 0.0).unwrap();
    let h = 1e-5;
    let ldm_at = |q: &AdapterParams| compute_gradients(q, batch, &draws, &den, &s, 0.0).unwrap().ldm;
    for (name, grad) in g.grads.tensors() {
        // the largest entry of each tensor
        let ((r, c), &analytic) = grad.indexed_iter().max_by(|a, b| a.1.abs().total_cmp(&b.1.abs())).unwrap();
        let perturbed = |delta: f64| {
            let mut q = p.clone();
            q.for_each_tensor_mut(|n, t| {
                if n == name {
                    t[[r, c]] += delta;
                }
            });
            ldm_at(&q)
        };
        let fd = (perturbed(h) - perturbed(-h)) / (2.0 * h);
        let rel = (fd - analytic).abs() / analytic.abs().max(fd.abs()).max(1e-6);
        assert!(rel < 1e-4, "{name}: analytic {analytic} fd {fd}");
    }
}

#[test]
fn every_tensor_receives_gradient() {
    let batch = examples(50, 1);
    let draws = draws_for(&batch, 50, 6);
    let g = compute_gradients(&adapter(), &batch, &draws, &toy(50), &schedule(50), 0.5).unwrap();
    for (name, t) in g.grads.tensors() {
        assert!(t.iter().any(|v| *v != 0.0), "{name} has an all-zero gradient");
    }
}

fn small_config(lr: f64) -> TrainConfig {
    TrainConfig {
        timesteps: 50,
        batch_size: 4,
        optimizer: AdamWConfig { learning_rate: lr, ..AdamWConfig::default() },
        ..TrainConfig::default()
    }
}

#[test]
fn zero_learning_rate_freezes_the_adapter() {
    let data = examples(50, 1);
    let den = toy(50);
    let start = TrainState::new(small_config(0.0), adapter(), &den).unwrap();
    let end = train(start.clone(), &data, &den, 5, None, None).unwrap();
    assert_eq!(end.adapter, start.adapter);
    assert_eq!(end.step, 5);
    assert_eq!(end.loss_history.len(), 5);
}

#[test]
fn backbone_is_never_modified() {
    let data = examples(50, 1);
    let den = toy(50);
    let before = den.fingerprint();
    let start = TrainState::new(small_config(1e-3), adapter(), &den).unwrap();
    let end = train(start, &data, &den, 20, None, None).unwrap();
    assert_eq!(den.fingerprint(), before);
    assert_eq!(end.backbone_fingerprint, before);

    let other = ToyDenoiser::new(ToyDenoiserConfig { seed: 99, ..ToyDenoiserConfig::default() }, schedule(50));
    assert!(train_step(&end, &data[..4], &other, &schedule(50)).is_err());
    assert!(train_step(&end, &data[..4], &den, &schedule(60)).is_err());
}

#[test]
fn resumed_checkpoint_continues_bit_identically() {
    let data = examples(50, 1);
    let den = toy(50);
    let dir = tempfile::tempdir().unwrap();
    let start = TrainState::new(small_config(1e-3), adapter(), &den).unwrap();
    let mid = train(start, &data, &den, 4, None, None).unwrap();
    let path = dir.path().join("ckpt.json");
    mid.save(&path).unwrap();
    let loaded = TrainState::load(&path).unwrap();
    assert_eq!(loaded, mid);

    let a = train(mid, &data, &den, 3, None, None).unwrap();
    let b = train(loaded, &data, &den, 3, None, None).unwrap();
    assert_eq!(a, b);
    for ((_, x), (_, y)) in a.adapter.tensors().into_iter().zip(b.adapter.tensors()) {
        assert!(x.iter().zip(y.iter()).all(|(p, q)| p.to_bits() == q.to_bits()));
    }

    std::fs::write(&path, "{ truncated").unwrap();
    assert!(matches!(TrainState::load(&path), Err(Error::Corrupt { .. })));
}

#[test]
fn training_log_has_one_line_per_step() {
    let data = examples(50, 1);
    let den = toy(50);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("train.log.jsonl");
    let mut log = TrainLog::append(&path).unwrap();
    let start = TrainState::new(small_config(1e-3), adapter(), &den).unwrap();
    let end = train(start, &data, &den, 6, Some(&mut log), None).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 6);
    assert!(moving_average(&end.loss_history, 0, 6).is_some());
    assert!(moving_average(&end.loss_history, 2, 6).is_none());
}

#[test]
fn non_finite_loss_aborts_with_a_snapshot() {
    let mut data = examples(50, 1);
    for ex in &mut data {
        ex.target_latent[[0, 0, 0]] = f64::NAN;
    }
    let den = toy(50);
    let dir = tempfile::tempdir().unwrap();
    let start = TrainState::new(small_config(1e-3), adapter(), &den).unwrap();
    let err = train(start.clone(), &data, &den, 3, None, Some(dir.path())).unwrap_err();
    assert!(matches!(err, Error::NonFiniteLoss { step: 0, .. }), "{err}");
    let snap = TrainState::load(&dir.path().join("diagnostic-step-0.json")).unwrap();
    assert_eq!(snap.adapter, start.adapter);
}

#[test]
fn invalid_configs_are_rejected() {
    let den = toy(50);
    for cfg in [
        TrainConfig { lambda_ins: -1.0, ..TrainConfig::default() },
        TrainConfig { batch_size: 0, ..TrainConfig::default() },
        TrainConfig { timesteps: 0, ..TrainConfig::default() },
    ] {
        assert!(TrainState::new(cfg, adapter(), &den).is_err());
    }
}
