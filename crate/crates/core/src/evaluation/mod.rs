//! Edit-quality metrics: PSNR, SSIM, CLIP-I, optional LPIPS, and the
//! emotion metrics Emo-A and Emo-S.

mod ssim;

use std::fmt::Write as _;

use image::RgbImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use ssim::{gaussian_window, ssim, ssim_map, SsimConfig};

use crate::emotion::EmotionLabel;
use crate::error::{shape_err, Result};
use crate::providers::{cosine, EmotionClassifier, ImageEncoder, ProviderSuite};

/// Reported for identical images.
pub const PSNR_CAP_DB: f64 = 100.0;

fn same_dims(a: &RgbImage, b: &RgbImage) -> Result<()> {
    if a.dimensions() != b.dimensions() {
        return Err(shape_err(format!("images are {:?} and {:?}", a.dimensions(), b.dimensions())));
    }
    Ok(())
}

/// `10·log10(max_val² / MSE)` over all channels, capped at [`PSNR_CAP_DB`].
pub fn psnr(a: &RgbImage, b: &RgbImage, max_val: f64) -> Result<f64> {
    same_dims(a, b)?;
    let n = a.as_raw().len();
    if n == 0 {
        return Err(shape_err("empty images"));
    }
    let sse: f64 = a.as_raw().iter().zip(b.as_raw()).map(|(x, y)| (*x as f64 - *y as f64).powi(2)).sum();
    if sse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (max_val * max_val / (sse / n as f64)).log10()).min(PSNR_CAP_DB))
}

/// Cosine of pooled image embeddings.
pub fn clip_i(a: &RgbImage, b: &RgbImage, encoder: &dyn ImageEncoder) -> Result<f64> {
    Ok(cosine(&encoder.encode_image(a)?.pooled, &encoder.encode_image(b)?.pooled))
}

/// A source image, its edit, and the emotion the edit aimed for.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalPair {
    pub id: String,
    pub emotion: EmotionLabel,
    pub source: RgbImage,
    pub edited: RgbImage,
}

/// Percentage of edited images whose most likely class is the intended one.
pub fn emo_a(pairs: &[EvalPair], classifier: &dyn EmotionClassifier) -> Result<f64> {
    if pairs.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    for p in pairs {
        if classifier.classify(&p.edited)?.argmax() == p.emotion {
            hits += 1;
        }
    }
    Ok(100.0 * hits as f64 / pairs.len() as f64)
}

/// Mean increase of the intended emotion's probability from source to edit.
pub fn emo_s(pairs: &[EvalPair], classifier: &dyn EmotionClassifier) -> Result<f64> {
    if pairs.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for p in pairs {
        total += classifier.classify(&p.edited)?.get(p.emotion) - classifier.classify(&p.source)?.get(p.emotion);
    }
    Ok(total / pairs.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairMetrics {
    pub pair_id: String,
    pub emotion: EmotionLabel,
    pub psnr: f64,
    pub ssim: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lpips: Option<f64>,
    pub clip_i: f64,
    pub target_emotion_prob_source: f64,
    pub target_emotion_prob_edited: f64,
    /// Whether the edited image's argmax class is the intended emotion.
    pub emotion_hit: bool,
}

impl PairMetrics {
    pub fn emotion_increment(&self) -> f64 {
        self.target_emotion_prob_edited - self.target_emotion_prob_source
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub pairs: usize,
    pub psnr: f64,
    pub ssim: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lpips: Option<f64>,
    pub clip_i: f64,
    /// Percent.
    pub emo_a: f64,
    pub emo_s: f64,
}

impl AggregateMetrics {
    pub fn from_pairs(per_pair: &[PairMetrics]) -> Self {
        let n = per_pair.len();
        let mean = |f: &dyn Fn(&PairMetrics) -> f64| {
            if n == 0 {
                0.0
            } else {
                per_pair.iter().map(f).sum::<f64>() / n as f64
            }
        };
        let lpips = if n > 0 && per_pair.iter().all(|p| p.lpips.is_some()) {
            Some(mean(&|p| p.lpips.unwrap_or_default()))
        } else {
            None
        };
        Self {
            pairs: n,
            psnr: mean(&|p| p.psnr),
            ssim: mean(&|p| p.ssim),
            lpips,
            clip_i: mean(&|p| p.clip_i),
            emo_a: 100.0 * mean(&|p| if p.emotion_hit { 1.0 } else { 0.0 }),
            emo_s: mean(&|p| p.emotion_increment()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub method: String,
    pub per_pair: Vec<PairMetrics>,
    pub aggregate: AggregateMetrics,
}

pub fn pair_metrics(p: &EvalPair, suite: &ProviderSuite, ssim_cfg: &SsimConfig) -> Result<PairMetrics> {
    let probs_src = suite.emotion_classifier.classify(&p.source)?;
    let probs_edit = suite.emotion_classifier.classify(&p.edited)?;
    Ok(PairMetrics {
        pair_id: p.id.clone(),
        emotion: p.emotion,
        psnr: psnr(&p.source, &p.edited, 255.0)?,
        ssim: ssim(&p.source, &p.edited, ssim_cfg)?,
        lpips: suite.lpips.as_ref().map(|l| l.distance(&p.source, &p.edited)).transpose()?,
        clip_i: clip_i(&p.source, &p.edited, suite.image_encoder.as_ref())?,
        target_emotion_prob_source: probs_src.get(p.emotion),
        target_emotion_prob_edited: probs_edit.get(p.emotion),
        emotion_hit: probs_edit.argmax() == p.emotion,
    })
}

/// Per-pair metrics in parallel; aggregates are plain means of them.
pub fn evaluate(method: &str, pairs: &[EvalPair], suite: &ProviderSuite, ssim_cfg: &SsimConfig) -> Result<MetricReport> {
    let per_pair = pairs.par_iter().map(|p| pair_metrics(p, suite, ssim_cfg)).collect::<Result<Vec<_>>>()?;
    let aggregate = AggregateMetrics::from_pairs(&per_pair);
    Ok(MetricReport { method: method.to_string(), per_pair, aggregate })
}

impl MetricReport {
    /// One JSON line per pair, then one for the aggregate.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for p in &self.per_pair {
            out.push_str(&serde_json::to_string(&serde_json::json!({"method": self.method, "pair": p}))?);
            out.push('\n');
        }
        out.push_str(&serde_json::to_string(&serde_json::json!({"method": self.method, "aggregate": self.aggregate}))?);
        out.push('\n');
        Ok(out)
    }
}

/// Text grid with one row per report. The LPIPS column appears only when
/// every report has it.
pub fn format_table(reports: &[MetricReport]) -> String {
    let with_lpips = !reports.is_empty() && reports.iter().all(|r| r.aggregate.lpips.is_some());
    let width = reports.iter().map(|r| r.method.len()).max().unwrap_or(0).max(6);
    let mut out = format!("{:<width$} | {:>8} | {:>6}", "Method", "PSNR", "SSIM");
    if with_lpips {
        out.push_str(&format!(" | {:>6}", "LPIPS"));
    }
    out.push_str(&format!(" | {:>6} | {:>7} | {:>7}\n", "CLIP-I", "Emo-A", "Emo-S"));
    out.push_str(&"-".repeat(out.trim_end().len()));
    out.push('\n');
    for r in reports {
        let a = &r.aggregate;
        let _ = write!(out, "{:<width$} | {:>8.2} | {:>6.3}", r.method, a.psnr, a.ssim);
        if with_lpips {
            let _ = write!(out, " | {:>6.3}", a.lpips.unwrap_or_default());
        }
        let _ = writeln!(out, " | {:>6.3} | {:>6.2}% | {:>7.3}", a.clip_i, a.emo_a, a.emo_s);
    }
    out
}
