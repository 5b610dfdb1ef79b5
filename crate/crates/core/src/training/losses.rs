use ndarray::{Array, Array1, Array2, Dimension};

use crate::adapter::ConditioningOutput;
use crate::error::{shape_err, Result};
use crate::providers::TextEncoder;

/// Mean of squared differences over every element.
pub fn mean_squared_error<D: Dimension>(a: &Array<f64, D>, b: &Array<f64, D>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(shape_err(format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    if a.is_empty() {
        return Ok(0.0);
    }
    Ok(a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64)
}

/// Broadcasts a pooled text vector over the rows of `c_e`.
pub fn broadcast_target(pooled: &Array1<f64>, rows: usize) -> Array2<f64> {
    pooled.broadcast((rows, pooled.len())).expect("1-D broadcast").to_owned()
}

/// `(1/M)·‖c_e − E_txt(instruction)‖²` with the pooled text vector repeated
/// on every row of `c_e`.
pub fn instruction_loss_against(c_e: &Array2<f64>, pooled: &Array1<f64>) -> Result<f64> {
    if pooled.len() != c_e.ncols() {
        return Err(shape_err(format!(
            "text embedding width {} does not match c_e width {}",
            pooled.len(),
            c_e.ncols()
        )));
    }
    mean_squared_error(c_e, &broadcast_target(pooled, c_e.nrows()))
}

pub fn instruction_loss(c_e: &ConditioningOutput, instruction: &str, text_encoder: &dyn TextEncoder) -> Result<f64> {
    let encoded = text_encoder.encode(instruction)?;
    instruction_loss_against(c_e.as_array(), &encoded.pooled)
}

/// `dL/dc_e` of [`instruction_loss_against`].
pub fn instruction_loss_grad(c_e: &Array2<f64>, pooled: &Array1<f64>) -> Array2<f64> {
    let m = c_e.len() as f64;
    (c_e - &broadcast_target(pooled, c_e.nrows())) * (2.0 / m)
}
