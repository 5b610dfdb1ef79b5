use std::io::Cursor;
use std::path::Path;

use image::{ImageFormat, Rgb, RgbImage};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, Result};

pub const MIN_SIDE: u32 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceTag {
    CollectionA,
    CollectionB,
    Artistic,
    Synthetic,
}

/// An image with a manifest-unique id.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRef {
    pub id: String,
    pub content: RgbImage,
    pub source_tag: SourceTag,
}

impl ImageRef {
    pub fn new(id: impl Into<String>, content: RgbImage, source_tag: SourceTag) -> Result<Self> {
        let id = id.into();
        if id.is_empty() {
            return Err(invalid("image id must not be empty"));
        }
        check_image(&content)?;
        Ok(Self { id, content, source_tag })
    }
}

pub fn check_image(img: &RgbImage) -> Result<()> {
    if img.width() == 0 || img.height() == 0 {
        return Err(invalid("empty image"));
    }
    if img.width() < MIN_SIDE || img.height() < MIN_SIDE {
        return Err(invalid(format!(
            "image is {}x{}, both sides must be at least {MIN_SIDE}",
            img.width(),
            img.height()
        )));
    }
    Ok(())
}

/// SHA-256 over dimensions and raw pixels.
pub fn content_hash(img: &RgbImage) -> String {
    let mut h = Sha256::new();
    h.update(img.width().to_le_bytes());
    h.update(img.height().to_le_bytes());
    h.update(img.as_raw());
    hex::encode(h.finalize())
}

/// Stable 64-bit seed from arbitrary byte chunks.
pub fn hash_seed(parts: &[&[u8]]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

pub fn encode_png(img: &RgbImage) -> Result<Vec<u8>> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)?;
    Ok(buf.into_inner())
}

pub fn save_png(img: &RgbImage, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, encode_png(img)?)?;
    Ok(())
}

pub fn load_png(path: &Path) -> Result<RgbImage> {
    let bytes = std::fs::read(path)?;
    Ok(image::load_from_memory_with_format(&bytes, ImageFormat::Png)?.to_rgb8())
}

/// Box-filter resample to `w × h`, returning per-channel means in [0, 255].
pub fn box_average(img: &RgbImage, w: u32, h: u32) -> Vec<[f64; 3]> {
    let (iw, ih) = (img.width() as u64, img.height() as u64);
    let mut out = Vec::with_capacity((w * h) as usize);
    for by in 0..h as u64 {
        let y0 = by * ih / h as u64;
        let y1 = ((by + 1) * ih / h as u64).max(y0 + 1);
        for bx in 0..w as u64 {
            let x0 = bx * iw / w as u64;
            let x1 = ((bx + 1) * iw / w as u64).max(x0 + 1);
            let mut acc = [0.0f64; 3];
            for y in y0..y1 {
                for x in x0..x1 {
                    let p = img.get_pixel(x as u32, y as u32);
                    for c in 0..3 {
                        acc[c] += p[c] as f64;
                    }
                }
            }
            let n = ((y1 - y0) * (x1 - x0)) as f64;
            out.push(acc.map(|v| v / n));
        }
    }
    out
}

/// Nearest-neighbour resize, used to paste generated content onto a source.
pub fn resize_nearest(img: &RgbImage, w: u32, h: u32) -> RgbImage {
    RgbImage::from_fn(w, h, |x, y| {
        let sx = (x as u64 * img.width() as u64 / w as u64) as u32;
        let sy = (y as u64 * img.height() as u64 / h as u64) as u32;
        *img.get_pixel(sx, sy)
    })
}

/// Per-pixel `(1 − w)·a + w·b`, rounded to 8 bits.
pub fn blend(a: &RgbImage, b: &RgbImage, w: f64) -> RgbImage {
    let b = if b.dimensions() == a.dimensions() {
        b.clone()
    } else {
        resize_nearest(b, a.width(), a.height())
    };
    RgbImage::from_fn(a.width(), a.height(), |x, y| {
        let (pa, pb) = (a.get_pixel(x, y), b.get_pixel(x, y));
        Rgb(std::array::from_fn(|c| {
            ((1.0 - w) * pa[c] as f64 + w * pb[c] as f64).round().clamp(0.0, 255.0) as u8
        }))
    })
}

/// Luma-free grayscale as the plain channel mean, in [0, 255].
pub fn grayscale(img: &RgbImage) -> Vec<f64> {
    img.pixels()
        .map(|p| (p[0] as f64 + p[1] as f64 + p[2] as f64) / 3.0)
        .collect()
}
