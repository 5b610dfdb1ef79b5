//! Synthetic training pairs whose targets are consistent with the toy
//! denoiser, so that the combined objective has a reachable optimum.

use super::{broadcast_target, ToyDenoiser, TrainingExample};
use crate::adapter::{EmotionEmbedding, ImageEmbedding};
use crate::attribution::FactorType;
use crate::emotion::EmotionLabel;
use crate::error::Result;
use crate::providers::mock::{motifs_for, synthetic_sources};
use crate::providers::ProviderSuite;

/// Instruction for an emotion: its first concrete motif, templated by type.
pub fn fixture_instruction(emotion: EmotionLabel) -> String {
    let m = motifs_for(emotion).find(|m| !m.abstract_content).expect("every emotion has a concrete motif");
    let summary = m.name.to_lowercase();
    match m.factor_type {
        FactorType::Scene => format!("Turn it into {summary}"),
        _ => format!("Add {summary}"),
    }
}

/// `sources × 8` pairs. Each target latent is the source latent plus the
/// denoiser's offset for a conditioning equal to the instruction embedding
/// on every row.
pub fn synthetic_training_set(
    suite: &ProviderSuite,
    denoiser: &ToyDenoiser,
    num_queries: usize,
    sources: usize,
    seed: u64,
) -> Result<Vec<TrainingExample>> {
    let mut out = Vec::with_capacity(sources * EmotionLabel::COUNT);
    for src in synthetic_sources(sources, seed, 32) {
        let source_latent = suite.latent_codec.encode_latent(&src.content)?;
        let image_tokens = ImageEmbedding::new(suite.image_encoder.encode_image(&src.content)?.tokens)?;
        for emotion in EmotionLabel::ALL {
            let instruction = fixture_instruction(emotion);
            let pooled = suite.text_encoder.encode(&instruction)?.pooled;
            let target_latent = &source_latent + &denoiser.offset(&broadcast_target(&pooled, num_queries));
            out.push(TrainingExample {
                id: format!("{}-{emotion}", src.id),
                emotion,
                emotion_tokens: EmotionEmbedding::new(suite.text_encoder.encode(emotion.word())?.tokens)?,
                image_tokens: image_tokens.clone(),
                source_latent: source_latent.clone(),
                target_latent,
                instruction,
                instruction_embedding: pooled,
            });
        }
    }
    Ok(out)
}
