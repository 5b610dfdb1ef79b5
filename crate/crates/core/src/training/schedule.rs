use ndarray::{Array, Dimension, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Result};

/// Forward-process variances with their cumulative products.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    /// Betas spaced linearly from `beta_start` to `beta_end` over `steps`.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(invalid("schedule needs at least one timestep"));
        }
        let betas = if steps == 1 {
            vec![beta_start]
        } else {
            (0..steps)
                .map(|i| beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64)
                .collect()
        };
        Self::from_betas(betas)
    }

    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(invalid("schedule needs at least one timestep"));
        }
        if betas.iter().any(|b| !(b.is_finite() && *b > 0.0 && *b < 1.0)) {
            return Err(invalid("every beta must lie in (0, 1)"));
        }
        if betas.windows(2).any(|w| w[1] < w[0]) {
            return Err(invalid("betas must be non-decreasing"));
        }
        let mut acc = 1.0;
        let alpha_bars = betas
            .iter()
            .map(|b| {
                acc *= 1.0 - b;
                acc
            })
            .collect();
        Ok(Self { betas, alpha_bars })
    }

    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    /// Cumulative product of `1 − beta` up to and including step `t` (1-based).
    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        if t == 0 || t > self.len() {
            return Err(invalid(format!("timestep {t} outside 1..={}", self.len())));
        }
        Ok(self.alpha_bars[t - 1])
    }
}

/// `sqrt(ᾱ)·z_0 + sqrt(1 − ᾱ)·eps`.
pub fn noise_with_alpha_bar<D: Dimension>(z0: &Array<f64, D>, eps: &Array<f64, D>, alpha_bar: f64) -> Result<Array<f64, D>> {
    if z0.shape() != eps.shape() {
        return Err(shape_err(format!("noise {:?} vs latent {:?}", eps.shape(), z0.shape())));
    }
    if !(0.0..=1.0).contains(&alpha_bar) {
        return Err(invalid(format!("alpha_bar {alpha_bar} outside [0, 1]")));
    }
    let (a, s) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    Ok(Zip::from(z0).and(eps).map_collect(|z, e| a * z + s * e))
}

/// Forward diffusion of `z0` to timestep `t` (1-based).
pub fn add_noise<D: Dimension>(z0: &Array<f64, D>, t: usize, eps: &Array<f64, D>, schedule: &NoiseSchedule) -> Result<Array<f64, D>> {
    noise_with_alpha_bar(z0, eps, schedule.alpha_bar(t)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn linear_schedule_invariants() {
        let s = NoiseSchedule::linear(1000, 1e-4, 2e-2).unwrap();
        assert_eq!(s.len(), 1000);
        assert!(s.betas().windows(2).all(|w| w[0] <= w[1]));
        for t in 1..1000 {
            assert!(s.alpha_bar(t + 1).unwrap() < s.alpha_bar(t).unwrap());
        }
        assert!((s.betas()[999] - 2e-2).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_betas_and_timesteps() {
        assert!(NoiseSchedule::from_betas(vec![0.1, 0.05]).is_err());
        assert!(NoiseSchedule::from_betas(vec![0.0, 0.1]).is_err());
        assert!(NoiseSchedule::from_betas(vec![0.5, 1.0]).is_err());
        let s = NoiseSchedule::linear(10, 1e-3, 1e-2).unwrap();
        let z = array![1.0, 2.0];
        assert!(add_noise(&z, 0, &z, &s).is_err());
        assert!(add_noise(&z, 11, &z, &s).is_err());
        assert!(add_noise(&z, 10, &z, &s).is_ok());
        assert!(add_noise(&z, 1, &array![1.0], &s).is_err());
    }

    #[test]
    fn limits_of_the_forward_process() {
        let z0 = array![0.3, -1.2, 2.0];
        let eps = array![1.0, 0.5, -0.25];
        assert_eq!(noise_with_alpha_bar(&z0, &eps, 1.0).unwrap(), z0);
        assert_eq!(noise_with_alpha_bar(&z0, &eps, 0.0).unwrap(), eps);
    }
}
