use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use image::RgbImage;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::manifest::{Manifest, ManifestHeader, ReviewMode, IMAGES_DIR};
use super::{gate_candidate_with, CandidateScores, GateConfig, PairRecord, ReviewStatus};
use crate::attribution::{Factor, FactorTree, FactorType};
use crate::emotion::EmotionLabel;
use crate::error::{invalid, Result};
use crate::providers::{content_hash, cosine, hash_seed, save_png, EditCondition, GuidanceScales, ImageRef, ProviderSuite};

/// Instruction templates per factor type; `{summary}` is replaced by the
/// factor summary with a lower-cased first letter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InstructionTemplates {
    pub object: String,
    pub scene: String,
    pub action: String,
    pub facial_expression: String,
}

impl Default for InstructionTemplates {
    fn default() -> Self {
        Self {
            object: "Add {summary}".into(),
            scene: "Turn it into {summary}".into(),
            action: "Add {summary}".into(),
            facial_expression: "Add {summary}".into(),
        }
    }
}

impl InstructionTemplates {
    pub fn render(&self, factor: &Factor) -> String {
        let template = match factor.factor_type {
            FactorType::Object => &self.object,
            FactorType::Scene => &self.scene,
            FactorType::Action => &self.action,
            FactorType::FacialExpression => &self.facial_expression,
        };
        let mut chars = factor.summary.trim().chars();
        let summary: String = match chars.next() {
            Some(c) => c.to_lowercase().chain(chars).collect(),
            None => String::new(),
        };
        template.replace("{summary}", &summary)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    /// Position in generation order; used as the last tie-break.
    pub index: usize,
    pub image: RgbImage,
    pub instruction: String,
    pub factor_summary: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredCandidate {
    pub candidate: Candidate,
    pub scores: CandidateScores,
}

/// `n` edits of `src`, each instructed by one factor of `tree`. Factors are
/// drawn without replacement in a seeded order and cycled when `n` exceeds
/// the factor count. Editor failures drop that candidate.
pub fn generate_candidates(
    src: &ImageRef,
    emotion: EmotionLabel,
    tree: &FactorTree,
    suite: &ProviderSuite,
    n: usize,
    templates: &InstructionTemplates,
    scales: GuidanceScales,
    seed: u64,
) -> Result<Vec<Candidate>> {
    if tree.is_empty() {
        return Err(invalid(format!("factor tree for {} is empty", tree.emotion)));
    }
    scales.validate()?;
    let unit_seed = hash_seed(&[b"candidates", &seed.to_le_bytes(), src.id.as_bytes(), emotion.word().as_bytes()]);
    let mut order: Vec<usize> = (0..tree.factors.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(unit_seed));
    let mut out = Vec::with_capacity(n);
    for index in 0..n {
        let factor = &tree.factors[order[index % order.len()]];
        let instruction = templates.render(factor);
        let edit_seed = hash_seed(&[&unit_seed.to_le_bytes(), &(index as u64).to_le_bytes()]);
        match suite.editor.edit(&src.content, &EditCondition::Instruction(instruction.clone()), scales, edit_seed) {
            Ok(image) => out.push(Candidate { index, image, instruction, factor_summary: factor.summary.clone() }),
            Err(e) => tracing::warn!(source = %src.id, %emotion, index, "editor failed, skipping candidate: {e}"),
        }
    }
    Ok(out)
}

pub fn score_candidate(
    source: &RgbImage,
    candidate: &RgbImage,
    instruction: &str,
    emotion: EmotionLabel,
    suite: &ProviderSuite,
) -> Result<CandidateScores> {
    let src = suite.image_encoder.encode_image(source)?.pooled;
    let cand = suite.image_encoder.encode_image(candidate)?.pooled;
    let text = suite.text_encoder.encode(instruction)?.pooled;
    Ok(CandidateScores {
        clip_i: cosine(&src, &cand),
        clip_t: cosine(&text, &cand),
        emotion_score: suite.emotion_classifier.classify(candidate)?.get(emotion),
        aesthetic: suite.aesthetic_scorer.score(candidate)?,
    })
}

/// Highest aesthetic score; ties go to higher clip_t, then lower index.
pub fn select_best(passing: &[ScoredCandidate]) -> Option<&ScoredCandidate> {
    passing.iter().min_by(|a, b| {
        b.scores
            .aesthetic
            .total_cmp(&a.scores.aesthetic)
            .then(b.scores.clip_t.total_cmp(&a.scores.clip_t))
            .then(a.candidate.index.cmp(&b.candidate.index))
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BuildConfig {
    pub candidates_per_source: usize,
    pub gate: GateConfig,
    pub templates: InstructionTemplates,
    pub scales: GuidanceScales,
    /// Marks every selected pair accepted and watermarks the manifest as
    /// unreviewed. For synthetic runs only.
    pub auto_accept: bool,
}

impl Default for BuildConfig {
    fn default() -> Self {
        Self {
            candidates_per_source: 4,
            gate: GateConfig::default(),
            templates: InstructionTemplates::default(),
            scales: GuidanceScales::default(),
            auto_accept: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuildOutcome {
    pub manifest: Manifest,
    pub candidates_generated: usize,
    pub candidates_passed: usize,
}

struct UnitResult {
    generated: usize,
    passed: usize,
    selected: Option<(ScoredCandidate, EmotionLabel)>,
}

/// Runs every (source, emotion) unit in parallel, then writes the selected
/// images and the manifest from a single thread.
pub fn build_dataset(
    sources: &[ImageRef],
    trees: &BTreeMap<EmotionLabel, FactorTree>,
    suite: &ProviderSuite,
    cfg: &BuildConfig,
    seed: u64,
    out_dir: &Path,
) -> Result<BuildOutcome> {
    let mut units = Vec::new();
    for src in sources {
        for (emotion, tree) in trees {
            if tree.is_empty() {
                tracing::warn!(%emotion, "skipping empty factor tree");
                continue;
            }
            units.push((src, *emotion, tree));
        }
    }
    let results: Vec<Result<UnitResult>> = units
        .par_iter()
        .map(|(src, emotion, tree)| {
            let candidates = generate_candidates(
                src,
                *emotion,
                tree,
                suite,
                cfg.candidates_per_source,
                &cfg.templates,
                cfg.scales,
                seed,
            )?;
            let generated = candidates.len();
            let mut passing = Vec::new();
            for c in candidates {
                let scores = score_candidate(&src.content, &c.image, &c.instruction, *emotion, suite)?;
                if gate_candidate_with(&scores, &cfg.gate).passed {
                    passing.push(ScoredCandidate { candidate: c, scores });
                }
            }
            let passed = passing.len();
            let selected = select_best(&passing).cloned().map(|s| (s, *emotion));
            Ok(UnitResult { generated, passed, selected })
        })
        .collect();

    let images = out_dir.join(IMAGES_DIR);
    fs::create_dir_all(&images)?;
    let status = if cfg.auto_accept { ReviewStatus::Accepted } else { ReviewStatus::Pending };
    let mut records = Vec::new();
    let (mut generated, mut passed) = (0, 0);
    for ((src, _, _), r) in units.iter().zip(results) {
        let r = r?;
        generated += r.generated;
        passed += r.passed;
        let Some((best, emotion)) = r.selected else { continue };
        let source_hash = write_image(out_dir, &src.content)?;
        let target_id = write_image(out_dir, &best.candidate.image)?;
        records.push(PairRecord {
            id: PairRecord::pair_id(&src.id, emotion),
            source_id: src.id.clone(),
            source_hash,
            emotion,
            target_id,
            instruction: best.candidate.instruction,
            factor_summary: best.candidate.factor_summary,
            scores: best.scores,
            review_status: status,
        });
    }
    let mode = if cfg.auto_accept { ReviewMode::AutoAcceptedUnreviewed } else { ReviewMode::Manual };
    let manifest = Manifest { header: ManifestHeader::new(mode, seed, cfg.gate), records };
    manifest.save(out_dir)?;
    Ok(BuildOutcome { manifest, candidates_generated: generated, candidates_passed: passed })
}

fn write_image(dir: &Path, img: &RgbImage) -> Result<String> {
    let hash = content_hash(img);
    let path = Manifest::image_path(dir, &hash);
    if !path.exists() {
        save_png(img, &path)?;
    }
    Ok(hash)
}
