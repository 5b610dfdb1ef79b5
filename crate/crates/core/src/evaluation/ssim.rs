use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SsimConfig {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    /// Dynamic range of pixel values.
    pub data_range: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        Self { window: 11, sigma: 1.5, k1: 0.01, k2: 0.03, data_range: 255.0 }
    }
}

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let taps: Vec<f64> = (0..size).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let sum: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / sum).collect()
}

/// BT.601 luma.
pub(crate) fn luma(img: &RgbImage) -> Vec<f64> {
    img.pixels().map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64).collect()
}

/// Separable "valid" filtering of a `w × h` plane.
fn filter(plane: &[f64], w: usize, h: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (ow, oh) = (w - k + 1, h - k + 1);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().enumerate().map(|(i, t)| t * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps.iter().enumerate().map(|(i, t)| t * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Local SSIM at every window position fully inside the image.
pub fn ssim_map(a: &RgbImage, b: &RgbImage, cfg: &SsimConfig) -> Result<Vec<f64>> {
    if a.dimensions() != b.dimensions() {
        return Err(shape_err(format!("images are {:?} and {:?}", a.dimensions(), b.dimensions())));
    }
    if cfg.window == 0 || !(cfg.sigma > 0.0) || !(cfg.data_range > 0.0) {
        return Err(invalid(format!("bad SSIM settings {cfg:?}")));
    }
    let (w, h) = (a.width() as usize, a.height() as usize);
    if w < cfg.window || h < cfg.window {
        return Err(invalid(format!("{w}x{h} image is smaller than the {0}x{0} window", cfg.window)));
    }
    let taps = gaussian_window(cfg.window, cfg.sigma);
    let (x, y) = (luma(a), luma(b));
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(u, v)| u * v).collect::<Vec<_>>();
    let mu_x = filter(&x, w, h, &taps);
    let mu_y = filter(&y, w, h, &taps);
    let xx = filter(&prod(&x, &x), w, h, &taps);
    let yy = filter(&prod(&y, &y), w, h, &taps);
    let xy = filter(&prod(&x, &y), w, h, &taps);
    let c1 = (cfg.k1 * cfg.data_range).powi(2);
    let c2 = (cfg.k2 * cfg.data_range).powi(2);
    Ok((0..mu_x.len())
        .map(|i| {
            let (mx, my) = (mu_x[i], mu_y[i]);
            let vx = xx[i] - mx * mx;
            let vy = yy[i] - my * my;
            let cov = xy[i] - mx * my;
            ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
        })
        .collect())
}

/// Mean local SSIM on luma with a Gaussian window.
pub fn ssim(a: &RgbImage, b: &RgbImage, cfg: &SsimConfig) -> Result<f64> {
    let map = ssim_map(a, b, cfg)?;
    Ok(map.iter().sum::<f64>() / map.len() as f64)
}
