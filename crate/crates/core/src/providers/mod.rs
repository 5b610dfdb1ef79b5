//! Interfaces to every external pretrained model, plus a deterministic mock
//! family so the whole pipeline runs offline.

mod image;
pub mod conformance;
pub mod mock;
mod registry;

use std::sync::{Arc, Mutex};

use ::image::RgbImage;
use ndarray::{Array1, Array2, Array3};
use serde::{Deserialize, Serialize};

pub use self::image::{
    blend, box_average, check_image, content_hash, encode_png, grayscale, hash_seed, load_png, resize_nearest,
    save_png, ImageRef, SourceTag, MIN_SIDE,
};
pub use registry::{parse_selection_override, PluginFactory, PluginRegistry, PluginSet, ProviderRole, SuiteSettings, PROVIDERS_ENV};

use crate::attribution::FactorType;
use crate::emotion::EmotionLabel;
use crate::error::{invalid, Result};

/// Common surface of every provider.
pub trait Provider: Send + Sync {
    fn plugin_name(&self) -> &str;

    /// Digest of the provider's parameters; constant for a frozen model.
    fn fingerprint(&self) -> String;

    /// `false` when concurrent calls are unsafe; the suite then serializes them.
    fn reentrant(&self) -> bool {
        true
    }
}

/// Token sequence plus a unit-norm pooled vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoding {
    pub tokens: Array2<f64>,
    pub pooled: Array1<f64>,
}

pub trait ImageEncoder: Provider {
    fn dim(&self) -> usize;
    fn encode_image(&self, img: &RgbImage) -> Result<Encoding>;
}

pub trait TextEncoder: Provider {
    fn dim(&self) -> usize;
    fn encode(&self, text: &str) -> Result<Encoding>;
}

/// Softmax output over [`EmotionLabel::ALL`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmotionProbs(pub [f64; EmotionLabel::COUNT]);

impl EmotionProbs {
    pub fn from_logits(logits: &[f64; EmotionLabel::COUNT]) -> Self {
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps = logits.map(|l| (l - max).exp());
        let z: f64 = exps.iter().sum();
        Self(exps.map(|e| e / z))
    }

    /// `p` on `emotion`, the remainder spread evenly over the other seven.
    pub fn pinned(emotion: EmotionLabel, p: f64) -> Self {
        let rest = (1.0 - p) / (EmotionLabel::COUNT - 1) as f64;
        let mut probs = [rest; EmotionLabel::COUNT];
        probs[emotion.index()] = p;
        Self(probs)
    }

    pub fn get(&self, emotion: EmotionLabel) -> f64 {
        self.0[emotion.index()]
    }

    /// Highest-probability category; ties go to the earlier category.
    pub fn argmax(&self) -> EmotionLabel {
        let mut best = 0;
        for i in 1..EmotionLabel::COUNT {
            if self.0[i] > self.0[best] {
                best = i;
            }
        }
        EmotionLabel::ALL[best]
    }
}

pub trait EmotionClassifier: Provider {
    fn classify(&self, img: &RgbImage) -> Result<EmotionProbs>;
}

pub trait AestheticScorer: Provider {
    fn score(&self, img: &RgbImage) -> Result<f64>;
}

/// Image guidance `s_I` and conditioning guidance `s_E`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuidanceScales {
    pub image: f64,
    pub conditioning: f64,
}

impl Default for GuidanceScales {
    fn default() -> Self {
        Self { image: 1.5, conditioning: 7.5 }
    }
}

impl GuidanceScales {
    pub fn validate(&self) -> Result<()> {
        if !(self.image.is_finite() && self.image > 0.0 && self.conditioning.is_finite() && self.conditioning >= 0.0) {
            return Err(invalid(format!(
                "guidance scales must be finite with s_I > 0 and s_E >= 0, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// What the frozen editing backbone is conditioned on.
#[derive(Debug, Clone, PartialEq)]
pub enum EditCondition {
    /// A content instruction, as used when generating training pairs.
    Instruction(String),
    /// An adapter conditioning embedding (`num_queries × d`).
    Embedding(Array2<f64>),
}

pub trait Editor: Provider {
    fn edit(&self, img: &RgbImage, cond: &EditCondition, scales: GuidanceScales, seed: u64) -> Result<RgbImage>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VlmSummary {
    pub summary: String,
    pub factor_type: FactorType,
    /// Content too abstract to be rendered by an editor.
    pub abstract_content: bool,
}

pub trait VlmSummarizer: Provider {
    fn summarize(&self, images: &[&ImageRef]) -> Result<VlmSummary>;
}

/// Image ↔ latent tensor (`channels × h × w`).
pub trait LatentCodec: Provider {
    fn latent_shape(&self) -> (usize, usize, usize);
    fn encode_latent(&self, img: &RgbImage) -> Result<Array3<f64>>;
    fn decode_latent(&self, latent: &Array3<f64>) -> Result<RgbImage>;
}

/// Learned perceptual distance (LPIPS-like). Optional.
pub trait PerceptualDistance: Provider {
    fn distance(&self, a: &RgbImage, b: &RgbImage) -> Result<f64>;
}

#[derive(Clone)]
pub struct ProviderSuite {
    pub image_encoder: Arc<dyn ImageEncoder>,
    pub text_encoder: Arc<dyn TextEncoder>,
    pub emotion_classifier: Arc<dyn EmotionClassifier>,
    pub aesthetic_scorer: Arc<dyn AestheticScorer>,
    pub editor: Arc<dyn Editor>,
    pub vlm: Arc<dyn VlmSummarizer>,
    pub latent_codec: Arc<dyn LatentCodec>,
    pub lpips: Option<Arc<dyn PerceptualDistance>>,
}

impl std::fmt::Debug for ProviderSuite {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProviderSuite")
            .field("image_encoder", &self.image_encoder.plugin_name())
            .field("text_encoder", &self.text_encoder.plugin_name())
            .field("emotion_classifier", &self.emotion_classifier.plugin_name())
            .field("aesthetic_scorer", &self.aesthetic_scorer.plugin_name())
            .field("editor", &self.editor.plugin_name())
            .field("vlm", &self.vlm.plugin_name())
            .field("latent_codec", &self.latent_codec.plugin_name())
            .field("lpips", &self.lpips.as_ref().map(|p| p.plugin_name().to_string()))
            .finish()
    }
}

impl ProviderSuite {
    /// The all-mock suite.
    pub fn mock(settings: SuiteSettings) -> Self {
        mock::MockWorld::new(settings).suite()
    }

    /// Per-role fingerprints, in a fixed role order.
    pub fn fingerprints(&self) -> Vec<(&'static str, String)> {
        let mut out = vec![
            ("image_encoder", self.image_encoder.fingerprint()),
            ("text_encoder", self.text_encoder.fingerprint()),
            ("emotion_classifier", self.emotion_classifier.fingerprint()),
            ("aesthetic_scorer", self.aesthetic_scorer.fingerprint()),
            ("editor", self.editor.fingerprint()),
            ("vlm", self.vlm.fingerprint()),
            ("latent_codec", self.latent_codec.fingerprint()),
        ];
        if let Some(l) = &self.lpips {
            out.push(("lpips", l.fingerprint()));
        }
        out
    }

    /// Wraps every non-reentrant provider so its calls run one at a time.
    pub fn serialize_non_reentrant(self) -> Self {
        fn guard<T: ?Sized + Provider>(p: Arc<T>) -> Option<Arc<Serialized<T>>> {
            (!p.reentrant()).then(|| Arc::new(Serialized { inner: p, lock: Mutex::new(()) }))
        }
        Self {
            image_encoder: match guard(self.image_encoder.clone()) {
                Some(g) => g,
                None => self.image_encoder,
            },
            text_encoder: match guard(self.text_encoder.clone()) {
                Some(g) => g,
                None => self.text_encoder,
            },
            emotion_classifier: match guard(self.emotion_classifier.clone()) {
                Some(g) => g,
                None => self.emotion_classifier,
            },
            aesthetic_scorer: match guard(self.aesthetic_scorer.clone()) {
                Some(g) => g,
                None => self.aesthetic_scorer,
            },
            editor: match guard(self.editor.clone()) {
                Some(g) => g,
                None => self.editor,
            },
            vlm: match guard(self.vlm.clone()) {
                Some(g) => g,
                None => self.vlm,
            },
            latent_codec: match guard(self.latent_codec.clone()) {
                Some(g) => g,
                None => self.latent_codec,
            },
            lpips: self.lpips.map(|l| match guard(l.clone()) {
                Some(g) => g as Arc<dyn PerceptualDistance>,
                None => l,
            }),
        }
    }
}

/// Mutex-guarded view of a non-reentrant provider.
pub struct Serialized<T: ?Sized> {
    inner: Arc<T>,
    lock: Mutex<()>,
}

impl<T: ?Sized> Serialized<T> {
    fn hold(&self) -> std::sync::MutexGuard<'_, ()> {
        self.lock.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
    }
}

impl<T: ?Sized + Provider> Provider for Serialized<T> {
    fn plugin_name(&self) -> &str {
        self.inner.plugin_name()
    }
    fn fingerprint(&self) -> String {
        self.inner.fingerprint()
    }
    fn reentrant(&self) -> bool {
        true
    }
}

impl<T: ?Sized + ImageEncoder> ImageEncoder for Serialized<T> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn encode_image(&self, img: &RgbImage) -> Result<Encoding> {
        let _g = self.hold();
        self.inner.encode_image(img)
    }
}

impl<T: ?Sized + TextEncoder> TextEncoder for Serialized<T> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn encode(&self, text: &str) -> Result<Encoding> {
        let _g = self.hold();
        self.inner.encode(text)
    }
}

impl<T: ?Sized + EmotionClassifier> EmotionClassifier for Serialized<T> {
    fn classify(&self, img: &RgbImage) -> Result<EmotionProbs> {
        let _g = self.hold();
        self.inner.classify(img)
    }
}

impl<T: ?Sized + AestheticScorer> AestheticScorer for Serialized<T> {
    fn score(&self, img: &RgbImage) -> Result<f64> {
        let _g = self.hold();
        self.inner.score(img)
    }
}

impl<T: ?Sized + Editor> Editor for Serialized<T> {
    fn edit(&self, img: &RgbImage, cond: &EditCondition, scales: GuidanceScales, seed: u64) -> Result<RgbImage> {
        let _g = self.hold();
        self.inner.edit(img, cond, scales, seed)
    }
}

impl<T: ?Sized + VlmSummarizer> VlmSummarizer for Serialized<T> {
    fn summarize(&self, images: &[&ImageRef]) -> Result<VlmSummary> {
        let _g = self.hold();
        self.inner.summarize(images)
    }
}

impl<T: ?Sized + LatentCodec> LatentCodec for Serialized<T> {
    fn latent_shape(&self) -> (usize, usize, usize) {
        self.inner.latent_shape()
    }
    fn encode_latent(&self, img: &RgbImage) -> Result<Array3<f64>> {
        let _g = self.hold();
        self.inner.encode_latent(img)
    }
    fn decode_latent(&self, latent: &Array3<f64>) -> Result<RgbImage> {
        let _g = self.hold();
        self.inner.decode_latent(latent)
    }
}

impl<T: ?Sized + PerceptualDistance> PerceptualDistance for Serialized<T> {
    fn distance(&self, a: &RgbImage, b: &RgbImage) -> Result<f64> {
        let _g = self.hold();
        self.inner.distance(a, b)
    }
}

/// Cosine similarity; zero when either vector is zero.
pub fn cosine(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    let na = a.dot(a).sqrt();
    let nb = b.dot(b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (a.dot(b) / (na * nb)).clamp(-1.0, 1.0)
}

/// Scales `v` to unit L2 norm; zero vectors are returned unchanged.
pub fn l2_normalize(mut v: Array1<f64>) -> Array1<f64> {
    let n = v.dot(&v).sqrt();
    if n > 0.0 {
        v /= n;
    }
    v
}
