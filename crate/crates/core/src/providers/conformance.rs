//! Contract checks every provider suite must satisfy, mock or real.

use image::RgbImage;

use super::mock::{corpus_image, neutral_image, MOTIFS};
use super::{EditCondition, GuidanceScales, ImageRef, ProviderSuite, SourceTag};

/// Runs the battery and returns one message per violated contract.
pub fn check_suite(suite: &ProviderSuite) -> Vec<String> {
    let mut failures = Vec::new();
    let mut fail = |m: String| failures.push(m);
    let images: Vec<RgbImage> = vec![
        neutral_image(1, 16),
        neutral_image(2, 40),
        corpus_image(&MOTIFS[0], 3, 32),
        RgbImage::from_pixel(8, 8, image::Rgb([0, 0, 0])),
    ];

    for (i, img) in images.iter().enumerate() {
        match suite.image_encoder.encode_image(img) {
            Ok(e) => {
                let norm = e.pooled.dot(&e.pooled).sqrt();
                if (norm - 1.0).abs() > 1e-6 && norm != 0.0 {
                    fail(format!("image {i}: pooled norm {norm}"));
                }
                if e.tokens.ncols() != suite.image_encoder.dim() || e.pooled.len() != suite.image_encoder.dim() {
                    fail(format!("image {i}: embedding width differs from dim()"));
                }
                if e.tokens.nrows() == 0 {
                    fail(format!("image {i}: no image tokens"));
                }
                match suite.image_encoder.encode_image(img) {
                    Ok(again) if again == e => {}
                    _ => fail(format!("image {i}: encoder is not deterministic")),
                }
            }
            Err(e) => fail(format!("image {i}: encoder failed: {e}")),
        }
        match suite.emotion_classifier.classify(img) {
            Ok(p) => {
                let sum: f64 = p.0.iter().sum();
                if (sum - 1.0).abs() > 1e-6 || p.0.iter().any(|v| *v < 0.0 || !v.is_finite()) {
                    fail(format!("image {i}: classifier output is not a distribution: {:?}", p.0));
                }
            }
            Err(e) => fail(format!("image {i}: classifier failed: {e}")),
        }
        match suite.aesthetic_scorer.score(img) {
            Ok(s) if s.is_finite() => {}
            Ok(s) => fail(format!("image {i}: aesthetic score {s}")),
            Err(e) => fail(format!("image {i}: aesthetic scorer failed: {e}")),
        }
        match suite.latent_codec.encode_latent(img) {
            Ok(z) => {
                if z.dim() != suite.latent_codec.latent_shape() {
                    fail(format!("image {i}: latent shape {:?}", z.dim()));
                }
                if let Err(e) = suite.latent_codec.decode_latent(&z) {
                    fail(format!("image {i}: decode failed: {e}"));
                }
            }
            Err(e) => fail(format!("image {i}: latent encode failed: {e}")),
        }
        let cond = EditCondition::Instruction("Add colorful butterfly".into());
        match suite.editor.edit(img, &cond, GuidanceScales::default(), 7) {
            Ok(out) => {
                if out.dimensions() != img.dimensions() {
                    fail(format!("image {i}: editor changed dimensions"));
                }
                match suite.editor.edit(img, &cond, GuidanceScales::default(), 7) {
                    Ok(again) if again == out => {}
                    _ => fail(format!("image {i}: editor is not deterministic for a fixed seed")),
                }
            }
            Err(e) => fail(format!("image {i}: editor failed: {e}")),
        }
    }

    for text in ["sadness", "Add colorful butterfly", "Turn it into a graveyard"] {
        match suite.text_encoder.encode(text) {
            Ok(e) => {
                let norm = e.pooled.dot(&e.pooled).sqrt();
                if (norm - 1.0).abs() > 1e-6 {
                    fail(format!("text `{text}`: pooled norm {norm}"));
                }
                if e.tokens.ncols() != suite.text_encoder.dim() {
                    fail(format!("text `{text}`: token width"));
                }
            }
            Err(e) => fail(format!("text `{text}`: encoder failed: {e}")),
        }
    }
    if suite.text_encoder.dim() != suite.image_encoder.dim() {
        fail("text and image encoders disagree on width".into());
    }

    let refs: Vec<ImageRef> = images
        .iter()
        .enumerate()
        .map(|(i, img)| ImageRef::new(format!("c{i}"), img.clone(), SourceTag::Synthetic).expect("valid fixture"))
        .collect();
    let borrowed: Vec<&ImageRef> = refs.iter().collect();
    match suite.vlm.summarize(&borrowed) {
        Ok(s) if !s.summary.trim().is_empty() => {}
        Ok(_) => fail("vlm returned an empty summary".into()),
        Err(e) => fail(format!("vlm failed: {e}")),
    }

    for (role, fp) in suite.fingerprints() {
        if fp.is_empty() {
            fail(format!("{role}: empty fingerprint"));
        }
    }
    failures
}
