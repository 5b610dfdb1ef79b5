//! Deterministic stand-ins for every provider role.
//!
//! All mocks share one [`MockWorld`]: a table of visual motifs (each tied to
//! an emotion and a factor type), seeded random projections used as the
//! image encoder, and fixture tables that pin specific outputs. Text is
//! "encoded" by rendering its concept image and embedding that, so text and
//! image embeddings live in one space and CLIP-style similarities behave
//! sensibly: an edit that pastes a motif raises both the text similarity to
//! the instruction and the classifier probability of the motif's emotion.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::Arc;

use image::{Rgb, RgbImage};
use ndarray::{Array1, Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use super::{
    blend, box_average, check_image, content_hash, cosine, grayscale, hash_seed, l2_normalize, AestheticScorer,
    EditCondition, Editor, EmotionClassifier, EmotionProbs, Encoding, GuidanceScales, ImageEncoder, ImageRef,
    LatentCodec, Provider, ProviderSuite, SourceTag, SuiteSettings, TextEncoder, VlmSummarizer, VlmSummary,
};
use crate::attribution::FactorType;
use crate::emotion::EmotionLabel;
use crate::error::{invalid, shape_err, Result};

pub const PLUGIN_NAME: &str = "mock";

/// Grid used for image features: 8×8 cells × RGB.
const GRID: u32 = 8;
const FEATURES: usize = (GRID * GRID * 3) as usize;
const QUADRANT_FEATURES: usize = FEATURES / 4;
/// Classifier logit scale applied to motif cosines.
const CLASSIFIER_SHARPNESS: f64 = 12.0;
/// Editor blend strength at the default guidance scales.
pub const EDIT_STRENGTH: f64 = 0.3;
const MOTIF_MATCH: f64 = 0.6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Motif {
    pub name: &'static str,
    pub emotion: EmotionLabel,
    pub factor_type: FactorType,
    pub abstract_content: bool,
}

const fn motif(name: &'static str, emotion: EmotionLabel, factor_type: FactorType) -> Motif {
    Motif { name, emotion, factor_type, abstract_content: false }
}

use EmotionLabel::*;
use FactorType::*;

pub const MOTIFS: &[Motif] = &[
    motif("Clown with balloons", Amusement, Object),
    motif("Dog in a costume", Amusement, Object),
    motif("Laughing children", Amusement, FacialExpression),
    motif("Starry night sky", Awe, Scene),
    motif("Snowy mountain peak", Awe, Scene),
    motif("Aurora over a lake", Awe, Scene),
    motif("Books with flowers", Contentment, Object),
    motif("Colorful butterfly", Contentment, Object),
    motif("Sunlit meadow", Contentment, Scene),
    motif("Fireworks", Excitement, Object),
    motif("Riding a roller coaster", Excitement, Action),
    motif("Cheering crowd", Excitement, Action),
    motif("Clenched fist", Anger, Action),
    motif("Burning car", Anger, Object),
    motif("Shouting face", Anger, FacialExpression),
    motif("Rotten food", Disgust, Object),
    motif("Overflowing trash", Disgust, Scene),
    motif("Cockroaches", Disgust, Object),
    motif("Ghost", Fear, Object),
    motif("Dark forest", Fear, Scene),
    motif("Screaming face", Fear, FacialExpression),
    motif("Graveyard", Sadness, Scene),
    motif("Wilted flowers", Sadness, Object),
    motif("Crying person", Sadness, FacialExpression),
    Motif { name: "Sense of loneliness", emotion: Sadness, factor_type: Scene, abstract_content: true },
    Motif { name: "Feeling of freedom", emotion: Contentment, factor_type: Scene, abstract_content: true },
];

pub fn motifs_for(emotion: EmotionLabel) -> impl Iterator<Item = &'static Motif> {
    MOTIFS.iter().filter(move |m| m.emotion == emotion)
}

pub fn find_motif(name: &str) -> Option<&'static Motif> {
    MOTIFS.iter().find(|m| m.name.eq_ignore_ascii_case(name))
}

fn palette(emotion: EmotionLabel) -> [f64; 3] {
    match emotion {
        Amusement => [240.0, 160.0, 40.0],
        Awe => [70.0, 80.0, 210.0],
        Contentment => [100.0, 200.0, 100.0],
        Excitement => [230.0, 40.0, 150.0],
        Anger => [180.0, 20.0, 20.0],
        Disgust => [130.0, 140.0, 20.0],
        Fear => [25.0, 25.0, 60.0],
        Sadness => [110.0, 130.0, 160.0],
    }
}

fn rng_for(parts: &[&[u8]]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(hash_seed(parts))
}

/// Sum of three seeded plane waves, roughly in [-1, 1].
fn wave_field(rng: &mut ChaCha8Rng) -> impl Fn(f64, f64) -> f64 {
    let waves: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| {
            let fx = rng.random_range(1..=3) as f64 * if rng.random::<bool>() { 1.0 } else { -1.0 };
            let fy = rng.random_range(0..=3) as f64;
            let phase = rng.random::<f64>() * 2.0 * PI;
            (fx, fy, phase)
        })
        .collect();
    move |u, v| waves.iter().map(|(fx, fy, ph)| (2.0 * PI * (fx * u + fy * v) + ph).sin()).sum::<f64>() / 3.0
}

fn render(size: u32, f: impl Fn(f64, f64) -> [f64; 3]) -> RgbImage {
    RgbImage::from_fn(size, size, |x, y| {
        let (u, v) = ((x as f64 + 0.5) / size as f64, (y as f64 + 0.5) / size as f64);
        Rgb(f(u, v).map(|c| c.round().clamp(0.0, 255.0) as u8))
    })
}

/// The canonical rendering of a motif: its emotion's palette modulated by a
/// motif-specific luminance pattern.
pub fn motif_image(m: &Motif, size: u32) -> RgbImage {
    let mut rng = rng_for(&[b"motif", m.name.as_bytes()]);
    let field = wave_field(&mut rng);
    let tint: [f64; 3] = std::array::from_fn(|_| 0.7 + 0.6 * rng.random::<f64>());
    let base = palette(m.emotion);
    render(size, |u, v| {
        let l = 90.0 * field(u, v);
        std::array::from_fn(|c| base[c] + l * tint[c])
    })
}

/// Flat emotion palette with a faint texture.
pub fn palette_image(emotion: EmotionLabel, size: u32) -> RgbImage {
    let base = palette(emotion);
    render(size, |u, v| std::array::from_fn(|c| base[c] + 6.0 * (2.0 * PI * (u + v)).sin()))
}

/// A smooth, emotionally neutral colour field.
pub fn neutral_image(seed: u64, size: u32) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6e65_7574_7261_6c00);
    let fields: Vec<_> = (0..3).map(|_| wave_field(&mut rng)).collect();
    let base: [f64; 3] = std::array::from_fn(|_| 90.0 + 80.0 * rng.random::<f64>());
    render(size, |u, v| std::array::from_fn(|c| base[c] + 70.0 * fields[c](u, v)))
}

/// A photo-like sample containing `motif` over a neutral background with noise.
pub fn corpus_image(m: &Motif, seed: u64, size: u32) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = 0.6 + 0.25 * rng.random::<f64>();
    let mut img = blend(&neutral_image(rng.random(), size), &motif_image(m, size), w);
    for p in img.pixels_mut() {
        for c in 0..3 {
            let n: f64 = rng.random_range(-18.0..18.0);
            p[c] = (p[c] as f64 + n).round().clamp(0.0, 255.0) as u8;
        }
    }
    img
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| {
        let z: f64 = StandardNormal.sample(rng);
        z * scale
    })
}

/// Shared state behind all mock providers.
pub struct MockWorld {
    settings: SuiteSettings,
    token_proj: Array2<f64>,
    pool_proj: Array2<f64>,
    positions: Array2<f64>,
    /// Pooled embedding of each entry of [`MOTIFS`].
    motif_embeddings: Vec<Array1<f64>>,
    classifier_pins: BTreeMap<String, EmotionProbs>,
    vlm_pins: BTreeMap<String, VlmSummary>,
    fingerprint: String,
}

impl MockWorld {
    pub fn new(settings: SuiteSettings) -> Self {
        let d = settings.dim.max(1);
        let mut rng = rng_for(&[b"mock-world", &settings.seed.to_le_bytes(), &(d as u64).to_le_bytes()]);
        let token_proj = gaussian_matrix(&mut rng, QUADRANT_FEATURES, d, 1.0 / (QUADRANT_FEATURES as f64).sqrt());
        let pool_proj = gaussian_matrix(&mut rng, FEATURES, d, 1.0);
        let positions = gaussian_matrix(&mut rng, 4, d, 0.1);
        let mut hasher = Sha256::new();
        hasher.update(PLUGIN_NAME.as_bytes());
        for m in [&token_proj, &pool_proj, &positions] {
            for v in m.iter() {
                hasher.update(v.to_le_bytes());
            }
        }
        let mut world = Self {
            settings: SuiteSettings { dim: d, seed: settings.seed },
            token_proj,
            pool_proj,
            positions,
            motif_embeddings: Vec::new(),
            classifier_pins: BTreeMap::new(),
            vlm_pins: BTreeMap::new(),
            fingerprint: hex::encode(hasher.finalize()),
        };
        world.motif_embeddings = MOTIFS.iter().map(|m| world.pooled(&motif_image(m, 32))).collect();
        world
    }

    /// Forces the classifier output for one exact image.
    pub fn pin_classifier(mut self, img: &RgbImage, probs: EmotionProbs) -> Self {
        self.classifier_pins.insert(content_hash(img), probs);
        self
    }

    /// Forces the VLM summary for any image set containing `image_id`.
    pub fn pin_summary(mut self, image_id: impl Into<String>, summary: VlmSummary) -> Self {
        self.vlm_pins.insert(image_id.into(), summary);
        self
    }

    pub fn settings(&self) -> SuiteSettings {
        self.settings
    }

    pub fn suite(self) -> ProviderSuite {
        let world = Arc::new(self);
        ProviderSuite {
            image_encoder: Arc::new(MockImageEncoder(world.clone())),
            text_encoder: Arc::new(MockTextEncoder(world.clone())),
            emotion_classifier: Arc::new(MockEmotionClassifier(world.clone())),
            aesthetic_scorer: Arc::new(MockAestheticScorer(world.clone())),
            editor: Arc::new(MockEditor(world.clone())),
            vlm: Arc::new(MockVlm(world.clone())),
            latent_codec: Arc::new(MockLatentCodec(world)),
            lpips: None,
        }
    }

    fn features(img: &RgbImage) -> Vec<f64> {
        box_average(img, GRID, GRID)
            .into_iter()
            .flat_map(|p| p.map(|c| c / 255.0 - 0.5))
            .collect()
    }

    fn pooled(&self, img: &RgbImage) -> Array1<f64> {
        let f = Array1::from(Self::features(img));
        l2_normalize(f.dot(&self.pool_proj))
    }

    fn embed(&self, img: &RgbImage) -> Result<Encoding> {
        if img.width() == 0 || img.height() == 0 {
            return Err(invalid("empty image"));
        }
        let f = Self::features(img);
        let d = self.settings.dim;
        let mut tokens = Array2::zeros((4, d));
        for q in 0..4usize {
            let (qy, qx) = (q / 2, q % 2);
            let mut quad = Vec::with_capacity(QUADRANT_FEATURES);
            for y in 0..4 {
                for x in 0..4 {
                    let cell = ((qy * 4 + y) * GRID as usize + qx * 4 + x) * 3;
                    quad.extend_from_slice(&f[cell..cell + 3]);
                }
            }
            let row = Array1::from(quad).dot(&self.token_proj) + self.positions.row(q);
            tokens.row_mut(q).assign(&row);
        }
        let pooled = l2_normalize(Array1::from(f).dot(&self.pool_proj));
        Ok(Encoding { tokens, pooled })
    }

    /// Longest motif name contained in `text`, case-insensitively.
    pub fn motif_in_text(text: &str) -> Option<&'static Motif> {
        let lower = text.to_lowercase();
        MOTIFS
            .iter()
            .filter(|m| lower.contains(&m.name.to_lowercase()))
            .max_by_key(|m| m.name.len())
    }

    /// What a piece of text "looks like" to the mock encoders and editor.
    pub fn concept_image(text: &str) -> RgbImage {
        if let Some(m) = Self::motif_in_text(text) {
            return motif_image(m, 32);
        }
        if let Ok(e) = text.parse::<EmotionLabel>() {
            return palette_image(e, 32);
        }
        neutral_image(hash_seed(&[b"concept", text.trim().to_lowercase().as_bytes()]), 32)
    }

    fn nearest_motif(&self, v: &Array1<f64>) -> Option<(usize, f64)> {
        self.motif_embeddings
            .iter()
            .enumerate()
            .filter(|(i, _)| !MOTIFS[*i].abstract_content)
            .map(|(i, e)| (i, cosine(v, e)))
            .fold(None, |best: Option<(usize, f64)>, (i, c)| match best {
                Some((_, bc)) if bc >= c => best,
                _ => Some((i, c)),
            })
    }
}

fn unit_hash(parts: &[&[u8]]) -> f64 {
    (hash_seed(parts) >> 11) as f64 / (1u64 << 53) as f64
}

pub struct MockImageEncoder(Arc<MockWorld>);
pub struct MockTextEncoder(Arc<MockWorld>);
pub struct MockEmotionClassifier(Arc<MockWorld>);
pub struct MockAestheticScorer(Arc<MockWorld>);
pub struct MockEditor(Arc<MockWorld>);
pub struct MockVlm(Arc<MockWorld>);
pub struct MockLatentCodec(Arc<MockWorld>);

macro_rules! mock_provider {
    ($($t:ident => $role:literal),* $(,)?) => {$(
        impl Provider for $t {
            fn plugin_name(&self) -> &str {
                PLUGIN_NAME
            }
            fn fingerprint(&self) -> String {
                format!("{}:{}", $role, self.0.fingerprint)
            }
        }
    )*};
}

mock_provider!(
    MockImageEncoder => "image_encoder",
    MockTextEncoder => "text_encoder",
    MockEmotionClassifier => "emotion_classifier",
    MockAestheticScorer => "aesthetic_scorer",
    MockEditor => "editor",
    MockVlm => "vlm",
    MockLatentCodec => "latent_codec",
);

impl ImageEncoder for MockImageEncoder {
    fn dim(&self) -> usize {
        self.0.settings.dim
    }

    fn encode_image(&self, img: &RgbImage) -> Result<Encoding> {
        self.0.embed(img)
    }
}

impl TextEncoder for MockTextEncoder {
    fn dim(&self) -> usize {
        self.0.settings.dim
    }

    /// One token per whitespace-separated word; the pooled vector embeds the
    /// concept image of the whole text.
    fn encode(&self, text: &str) -> Result<Encoding> {
        let words: Vec<&str> = text.split_whitespace().collect();
        if words.is_empty() {
            return Err(invalid("cannot encode empty text"));
        }
        let d = self.0.settings.dim;
        let mut tokens = Array2::zeros((words.len(), d));
        for (i, w) in words.iter().enumerate() {
            tokens.row_mut(i).assign(&self.0.pooled(&MockWorld::concept_image(w)));
        }
        let pooled = self.0.pooled(&MockWorld::concept_image(text));
        Ok(Encoding { tokens, pooled })
    }
}

impl EmotionClassifier for MockEmotionClassifier {
    fn classify(&self, img: &RgbImage) -> Result<EmotionProbs> {
        if img.width() == 0 || img.height() == 0 {
            return Err(invalid("empty image"));
        }
        let hash = content_hash(img);
        if let Some(p) = self.0.classifier_pins.get(&hash) {
            return Ok(*p);
        }
        let pooled = self.0.pooled(img);
        let mut logits = [f64::NEG_INFINITY; EmotionLabel::COUNT];
        for (m, emb) in MOTIFS.iter().zip(&self.0.motif_embeddings) {
            let l = &mut logits[m.emotion.index()];
            *l = l.max(CLASSIFIER_SHARPNESS * cosine(&pooled, emb));
        }
        for (i, l) in logits.iter_mut().enumerate() {
            *l += 0.1 * (unit_hash(&[hash.as_bytes(), &[i as u8]]) - 0.5);
        }
        Ok(EmotionProbs::from_logits(&logits))
    }
}

impl AestheticScorer for MockAestheticScorer {
    /// Contrast and colourfulness, squashed into roughly [2, 7].
    fn score(&self, img: &RgbImage) -> Result<f64> {
        check_image(img)?;
        let gray = grayscale(img);
        let n = gray.len() as f64;
        let mean = gray.iter().sum::<f64>() / n;
        let std = (gray.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / n).sqrt();
        let colorful = img
            .pixels()
            .map(|p| {
                let (r, g, b) = (p[0] as f64, p[1] as f64, p[2] as f64);
                (r - g).abs() + (g - b).abs() + (b - r).abs()
            })
            .sum::<f64>()
            / (3.0 * n);
        let jitter = unit_hash(&[content_hash(img).as_bytes(), b"aesthetic"]) - 0.5;
        Ok(4.5 + 1.5 * ((std - 40.0) / 25.0).tanh() + ((colorful - 30.0) / 30.0).tanh() + 0.3 * jitter)
    }
}

impl MockEditor {
    fn strength(scales: GuidanceScales, jitter: f64) -> f64 {
        let base = EDIT_STRENGTH * (scales.conditioning / 7.5) * (1.5 / scales.image);
        (base * (0.7 + 0.6 * jitter)).clamp(0.0, 0.95)
    }
}

impl Editor for MockEditor {
    /// Blends the condition's concept image into the source. Lower image
    /// guidance or higher conditioning guidance gives a stronger edit.
    fn edit(&self, img: &RgbImage, cond: &EditCondition, scales: GuidanceScales, seed: u64) -> Result<RgbImage> {
        check_image(img)?;
        scales.validate()?;
        let (concept, cond_bytes) = match cond {
            EditCondition::Instruction(text) => {
                if text.trim().is_empty() {
                    return Err(invalid("empty instruction"));
                }
                (MockWorld::concept_image(text), text.as_bytes().to_vec())
            }
            EditCondition::Embedding(c_e) => {
                if c_e.nrows() == 0 || c_e.ncols() != self.0.settings.dim {
                    return Err(shape_err(format!(
                        "conditioning of shape {:?} does not match width {}",
                        c_e.dim(),
                        self.0.settings.dim
                    )));
                }
                let mean = c_e.mean_axis(ndarray::Axis(0)).expect("non-empty");
                let bytes: Vec<u8> = c_e.iter().flat_map(|v| v.to_le_bytes()).collect();
                match self.0.nearest_motif(&mean) {
                    Some((i, _)) if mean.iter().any(|v| *v != 0.0) => (motif_image(&MOTIFS[i], 32), bytes),
                    _ => return Ok(img.clone()),
                }
            }
        };
        let jitter = unit_hash(&[content_hash(img).as_bytes(), &cond_bytes, &seed.to_le_bytes()]);
        Ok(blend(img, &concept, Self::strength(scales, jitter)))
    }
}

impl VlmSummarizer for MockVlm {
    fn summarize(&self, images: &[&ImageRef]) -> Result<VlmSummary> {
        if images.is_empty() {
            return Err(invalid("cannot summarize an empty image set"));
        }
        let mut ids: Vec<&str> = images.iter().map(|i| i.id.as_str()).collect();
        ids.sort_unstable();
        if let Some(pin) = ids.iter().find_map(|id| self.0.vlm_pins.get(*id)) {
            return Ok(pin.clone());
        }
        let mut mean = Array1::zeros(self.0.settings.dim);
        for img in images {
            mean += &self.0.pooled(&img.content);
        }
        let best = self
            .0
            .motif_embeddings
            .iter()
            .enumerate()
            .map(|(i, e)| (i, cosine(&mean, e)))
            .fold((0, f64::NEG_INFINITY), |b, c| if c.1 > b.1 { c } else { b });
        Ok(if best.1 >= MOTIF_MATCH {
            let m = &MOTIFS[best.0];
            VlmSummary {
                summary: m.name.to_string(),
                factor_type: m.factor_type,
                abstract_content: m.abstract_content,
            }
        } else {
            VlmSummary {
                summary: "Indistinct textures".to_string(),
                factor_type: FactorType::Scene,
                abstract_content: true,
            }
        })
    }
}

const LATENT_SIDE: usize = 8;
const LATENT_CHANNELS: usize = 4;

impl LatentCodec for MockLatentCodec {
    fn latent_shape(&self) -> (usize, usize, usize) {
        (LATENT_CHANNELS, LATENT_SIDE, LATENT_SIDE)
    }

    /// 16×16 grayscale folded 2×2 space-to-depth into 4 × 8 × 8, scaled to [-1, 1].
    fn encode_latent(&self, img: &RgbImage) -> Result<Array3<f64>> {
        check_image(img)?;
        let side = (LATENT_SIDE * 2) as u32;
        let gray: Vec<f64> = box_average(img, side, side)
            .into_iter()
            .map(|p| (p[0] + p[1] + p[2]) / 3.0)
            .collect();
        Ok(Array3::from_shape_fn((LATENT_CHANNELS, LATENT_SIDE, LATENT_SIDE), |(c, i, j)| {
            let (di, dj) = (c / 2, c % 2);
            gray[(2 * i + di) * side as usize + 2 * j + dj] / 127.5 - 1.0
        }))
    }

    fn decode_latent(&self, latent: &Array3<f64>) -> Result<RgbImage> {
        if latent.dim() != (LATENT_CHANNELS, LATENT_SIDE, LATENT_SIDE) {
            return Err(shape_err(format!("latent of shape {:?}", latent.dim())));
        }
        if !latent.iter().all(|v| v.is_finite()) {
            return Err(invalid("latent contains non-finite entries"));
        }
        let side = (LATENT_SIDE * 2) as u32;
        Ok(RgbImage::from_fn(side, side, |x, y| {
            let (x, y) = (x as usize, y as usize);
            let z = latent[[(y % 2) * 2 + x % 2, y / 2, x / 2]];
            let g = ((z + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8;
            Rgb([g, g, g])
        }))
    }
}

/// Neutral source photos for dataset construction.
pub fn synthetic_sources(count: usize, seed: u64, size: u32) -> Vec<ImageRef> {
    let tags = [SourceTag::CollectionA, SourceTag::CollectionB, SourceTag::Artistic];
    (0..count)
        .map(|i| {
            let img = neutral_image(hash_seed(&[b"source", &seed.to_le_bytes(), &(i as u64).to_le_bytes()]), size);
            ImageRef::new(format!("src-{i:04}"), img, tags[i % tags.len()]).expect("generated images are valid")
        })
        .collect()
}

/// Labelled corpus standing in for an emotion dataset: for each emotion,
/// `per_motif` noisy renderings of each concrete motif plus `background`
/// motif-free images.
pub fn synthetic_corpus(per_motif: usize, background: usize, seed: u64, size: u32) -> Vec<(EmotionLabel, ImageRef)> {
    let mut out = Vec::new();
    for e in EmotionLabel::ALL {
        let mut n = 0usize;
        for m in motifs_for(e).filter(|m| !m.abstract_content) {
            for k in 0..per_motif {
                let s = hash_seed(&[b"corpus", &seed.to_le_bytes(), m.name.as_bytes(), &(k as u64).to_le_bytes()]);
                let img = corpus_image(m, s, size);
                out.push((e, ImageRef::new(format!("{e}-{n:03}"), img, SourceTag::Synthetic).expect("valid")));
                n += 1;
            }
        }
        for k in 0..background {
            let s = hash_seed(&[b"background", &seed.to_le_bytes(), e.word().as_bytes(), &(k as u64).to_le_bytes()]);
            let img = neutral_image(s, size);
            out.push((e, ImageRef::new(format!("{e}-{n:03}"), img, SourceTag::Synthetic).expect("valid")));
            n += 1;
        }
    }
    out
}

impl From<&Motif> for VlmSummary {
    fn from(m: &Motif) -> Self {
        VlmSummary {
            summary: m.name.to_string(),
            factor_type: m.factor_type,
            abstract_content: m.abstract_content,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn world() -> MockWorld {
        MockWorld::new(SuiteSettings { dim: 32, seed: 9 })
    }

    #[test]
    fn embedding_is_deterministic_normalized_and_distinct() {
        let suite = world().suite();
        let img = neutral_image(3, 24);
        let a = suite.image_encoder.encode_image(&img).unwrap();
        let b = suite.image_encoder.encode_image(&img).unwrap();
        assert_eq!(a, b);
        assert!((a.pooled.dot(&a.pooled).sqrt() - 1.0).abs() < 1e-6);
        let mut other = img.clone();
        let p = other.get_pixel(5, 5).0;
        other.put_pixel(5, 5, Rgb([p[0].wrapping_add(40), p[1], p[2]]));
        let c = suite.image_encoder.encode_image(&other).unwrap();
        assert!(cosine(&a.pooled, &c.pooled) < 1.0);
        assert!(suite.image_encoder.encode_image(&RgbImage::new(0, 0)).is_err());
    }

    #[test]
    fn classifier_pins_and_normalization() {
        let img = neutral_image(4, 16);
        let suite = world().pin_classifier(&img, EmotionProbs::pinned(Amusement, 0.9)).suite();
        let p = suite.emotion_classifier.classify(&img).unwrap();
        assert!((p.get(Amusement) - 0.9).abs() < 1e-12);
        let unpinned = neutral_image(5, 16);
        let q1 = suite.emotion_classifier.classify(&unpinned).unwrap();
        let q2 = suite.emotion_classifier.classify(&unpinned).unwrap();
        assert_eq!(q1, q2);
        assert!((q1.0.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert!(q1.0.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn motif_images_classify_as_their_emotion() {
        let suite = world().suite();
        for m in MOTIFS.iter().filter(|m| !m.abstract_content) {
            let p = suite.emotion_classifier.classify(&corpus_image(m, 1, 32)).unwrap();
            assert_eq!(p.argmax(), m.emotion, "{}", m.name);
        }
    }

    #[test]
    fn text_and_edit_share_a_space() {
        let suite = world().suite();
        let src = neutral_image(77, 32);
        let instr = "Add colorful butterfly";
        let edited = suite
            .editor
            .edit(&src, &EditCondition::Instruction(instr.into()), GuidanceScales::default(), 0)
            .unwrap();
        let t = suite.text_encoder.encode(instr).unwrap();
        let before = cosine(&suite.image_encoder.encode_image(&src).unwrap().pooled, &t.pooled);
        let after = cosine(&suite.image_encoder.encode_image(&edited).unwrap().pooled, &t.pooled);
        assert!(after > before);
        let p = suite.emotion_classifier.classify(&edited).unwrap();
        assert!(p.get(Contentment) > suite.emotion_classifier.classify(&src).unwrap().get(Contentment));
    }

    #[test]
    fn lower_image_guidance_edits_more() {
        let suite = world().suite();
        let src = neutral_image(12, 32);
        let cond = EditCondition::Instruction("Add ghost".into());
        let dist = |s_i: f64| {
            let out = suite
                .editor
                .edit(&src, &cond, GuidanceScales { image: s_i, conditioning: 7.5 }, 3)
                .unwrap();
            out.as_raw()
                .iter()
                .zip(src.as_raw())
                .map(|(a, b)| (*a as f64 - *b as f64).abs())
                .sum::<f64>()
        };
        assert!(dist(2.0) < dist(1.5));
        assert!(dist(1.5) < dist(1.0));
    }

    #[test]
    fn latent_codec_round_trips_gray_images() {
        let suite = world().suite();
        let z = Array3::from_shape_fn((4, 8, 8), |(c, i, j)| ((c * 64 + i * 8 + j) as f64 / 256.0) - 0.5);
        let img = suite.latent_codec.decode_latent(&z).unwrap();
        let back = suite.latent_codec.encode_latent(&img).unwrap();
        for (a, b) in z.iter().zip(back.iter()) {
            assert!((a - b).abs() <= 0.5 / 127.5 + 1e-12);
        }
        assert!(suite.latent_codec.decode_latent(&Array3::zeros((3, 8, 8))).is_err());
    }

    #[test]
    fn vlm_names_motif_clusters() {
        let suite = world().suite();
        let m = find_motif("Books with flowers").unwrap();
        let imgs: Vec<ImageRef> = (0..5)
            .map(|k| ImageRef::new(format!("b{k}"), corpus_image(m, k, 32), SourceTag::Synthetic).unwrap())
            .collect();
        let refs: Vec<&ImageRef> = imgs.iter().collect();
        let s = suite.vlm.summarize(&refs).unwrap();
        assert_eq!(s.summary, "Books with flowers");
        assert_eq!(s.factor_type, FactorType::Object);
    }
}
