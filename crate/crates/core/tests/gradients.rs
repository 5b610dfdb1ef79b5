mod common;

use common::*;
use emoforge_core::adapter::*;

fn check(residual: bool, seed: u64) {
    let cfg = AdapterConfig { num_queries: 3, dim: 8, num_blocks: 2, num_heads: 2, residual, ..Default::default() };
    let mut p = AdapterParams::init(cfg, seed).unwrap();
    // move layer-norm and bias tensors off their constant init
    p.jitter(0.3, seed + 1);
    let mut r = rng(seed);
    let e_t = EmotionEmbedding::new(random_matrix(&mut r, 2, 8, 1.0)).unwrap();
    let e_i = ImageEmbedding::new(random_matrix(&mut r, 4, 8, 1.0)).unwrap();
    let weights = random_matrix(&mut r, 3, 8, 1.0);
    let report = gradient_check(&p, &e_t, &e_i, &weights);
    assert_eq!(report.len(), p.tensor_names().len());
    for (name, rel) in report {
        assert!(rel < 1e-4, "{name}: relative error {rel:e}");
    }
}

#[test]
fn attention_only_gradients_match_finite_differences() {
    check(false, 21);
}

#[test]
fn residual_block_gradients_match_finite_differences() {
    check(true, 22);
}

#[test]
fn backward_rejects_wrong_gradient_shape() {
    let p = AdapterParams::init(AdapterConfig { num_queries: 2, dim: 4, num_blocks: 1, num_heads: 2, ..Default::default() }, 0).unwrap();
    let e_t = EmotionEmbedding::new(ndarray::Array2::zeros((1, 4))).unwrap();
    let e_i = ImageEmbedding::new(ndarray::Array2::ones((2, 4))).unwrap();
    let (_, tape) = p.forward_tape(&e_t, &e_i).unwrap();
    assert!(p.backward(&tape, &ndarray::Array2::zeros((3, 4))).is_err());
}
