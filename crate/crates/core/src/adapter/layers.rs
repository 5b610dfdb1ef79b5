use ndarray::{Array2, Axis};

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// Tanh approximation of GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let inner = GELU_C * (x + 0.044715 * x * x * x);
    let t = inner.tanh();
    let d_inner = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * d_inner
}

pub(crate) struct LayerNormCache {
    pub x_hat: Array2<f64>,
    pub inv_std: Array2<f64>,
}

/// Row-wise layer norm; `gamma`/`beta` are `1 × d`.
pub(crate) fn layer_norm(
    x: &Array2<f64>,
    gamma: &Array2<f64>,
    beta: &Array2<f64>,
    eps: f64,
) -> (Array2<f64>, LayerNormCache) {
    let mean = x.mean_axis(Axis(1)).expect("non-empty rows").insert_axis(Axis(1));
    let centered = x - &mean;
    let var = (&centered * &centered).mean_axis(Axis(1)).expect("non-empty rows").insert_axis(Axis(1));
    let inv_std = var.mapv(|v| 1.0 / (v + eps).sqrt());
    let x_hat = &centered * &inv_std;
    let y = &x_hat * gamma + beta;
    (y, LayerNormCache { x_hat, inv_std })
}

/// Returns (dx, dgamma, dbeta).
pub(crate) fn layer_norm_backward(
    cache: &LayerNormCache,
    gamma: &Array2<f64>,
    d_y: &Array2<f64>,
) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    let d_gamma = (d_y * &cache.x_hat).sum_axis(Axis(0)).insert_axis(Axis(0));
    let d_beta = d_y.sum_axis(Axis(0)).insert_axis(Axis(0));
    let d_xhat = d_y * gamma;
    let mean_d = d_xhat.mean_axis(Axis(1)).expect("rows").insert_axis(Axis(1));
    let mean_dx = (&d_xhat * &cache.x_hat).mean_axis(Axis(1)).expect("rows").insert_axis(Axis(1));
    let d_x = (&d_xhat - &mean_d - &cache.x_hat * &mean_dx) * &cache.inv_std;
    (d_x, d_gamma, d_beta)
}
