//! Source–emotion–target pair construction: candidate edits, gating,
//! aesthetic selection and the pair manifest.

mod generate;
mod manifest;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

pub use generate::{
    build_dataset, generate_candidates, score_candidate, select_best, BuildConfig, BuildOutcome, Candidate, InstructionTemplates,
    ScoredCandidate,
};
pub use manifest::{Manifest, ManifestHeader, ReviewMode, IMAGES_DIR, MANIFEST_FILE, REVIEWS_FILE};

use crate::emotion::EmotionLabel;

/// Similarities and scores of one candidate edit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateScores {
    /// Pooled image–image cosine between source and candidate.
    pub clip_i: f64,
    /// Pooled text–image cosine between instruction and candidate.
    pub clip_t: f64,
    /// Classifier probability of the intended emotion.
    pub emotion_score: f64,
    pub aesthetic: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GateConfig {
    pub clip_i_min: f64,
    pub clip_i_max: f64,
    pub clip_t_min: f64,
    pub clip_t_max: f64,
    /// Strict lower bound.
    pub emotion_min: f64,
}

impl Default for GateConfig {
    fn default() -> Self {
        Self { clip_i_min: 0.75, clip_i_max: 0.9, clip_t_min: 0.25, clip_t_max: 1.0, emotion_min: 0.3 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GateResult {
    pub passed: bool,
    /// One entry per violated predicate.
    pub reasons: Vec<String>,
}

pub fn gate_candidate(scores: &CandidateScores) -> GateResult {
    gate_candidate_with(scores, &GateConfig::default())
}

pub fn gate_candidate_with(s: &CandidateScores, cfg: &GateConfig) -> GateResult {
    let mut reasons = Vec::new();
    if !(s.clip_i >= cfg.clip_i_min) {
        reasons.push(format!("clip_i below {}", cfg.clip_i_min));
    }
    if !(s.clip_i <= cfg.clip_i_max) {
        reasons.push(format!("clip_i above {}", cfg.clip_i_max));
    }
    if !(s.clip_t >= cfg.clip_t_min) {
        reasons.push(format!("clip_t below {}", cfg.clip_t_min));
    }
    if s.clip_t > cfg.clip_t_max {
        reasons.push(format!("clip_t above {}", cfg.clip_t_max));
    }
    if !(s.emotion_score > cfg.emotion_min) {
        reasons.push(format!("emotion_score not above {}", cfg.emotion_min));
    }
    // NaN fails both sides of a range; report it once
    if s.clip_i.is_nan() {
        reasons.retain(|r| !r.starts_with("clip_i above"));
    }
    GateResult { passed: reasons.is_empty(), reasons }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReviewStatus {
    Pending,
    Accepted,
    Rejected,
}

impl std::fmt::Display for ReviewStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Pending => "pending",
            Self::Accepted => "accepted",
            Self::Rejected => "rejected",
        })
    }
}

/// A source–emotion–target triplet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub id: String,
    pub source_id: String,
    /// Content hash of the source image under `images/`.
    pub source_hash: String,
    pub emotion: EmotionLabel,
    /// Content hash of the selected target image under `images/`.
    pub target_id: String,
    pub instruction: String,
    pub factor_summary: String,
    pub scores: CandidateScores,
    pub review_status: ReviewStatus,
}

impl PairRecord {
    pub fn pair_id(source_id: &str, emotion: EmotionLabel) -> String {
        format!("{source_id}:{emotion}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub source_count: usize,
    pub pair_count: usize,
    /// Accepted pairs per distinct source, rounded to one decimal.
    pub mean_directions_per_source: f64,
    pub per_emotion: BTreeMap<EmotionLabel, usize>,
}

/// Counts over accepted records only.
pub fn dataset_stats(records: &[PairRecord]) -> DatasetStats {
    let accepted: Vec<&PairRecord> = records.iter().filter(|r| r.review_status == ReviewStatus::Accepted).collect();
    let sources: BTreeSet<&str> = accepted.iter().map(|r| r.source_id.as_str()).collect();
    let mut per_emotion: BTreeMap<EmotionLabel, usize> = EmotionLabel::ALL.iter().map(|e| (*e, 0)).collect();
    for r in &accepted {
        *per_emotion.entry(r.emotion).or_default() += 1;
    }
    let mean = if sources.is_empty() {
        0.0
    } else {
        (accepted.len() as f64 / sources.len() as f64 * 10.0).round() / 10.0
    };
    DatasetStats {
        source_count: sources.len(),
        pair_count: accepted.len(),
        mean_directions_per_source: mean,
        per_emotion,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scores(clip_i: f64, clip_t: f64, emo: f64) -> CandidateScores {
        CandidateScores { clip_i, clip_t, emotion_score: emo, aesthetic: 0.5 }
    }

    #[test]
    fn gate_examples() {
        let r = gate_candidate(&scores(0.95, 0.5, 0.6));
        assert!(!r.passed);
        assert_eq!(r.reasons, vec!["clip_i above 0.9"]);
        assert!(gate_candidate(&scores(0.80, 0.30, 0.35)).passed);
        let r = gate_candidate(&scores(0.80, 0.30, 0.30));
        assert_eq!(r.reasons, vec!["emotion_score not above 0.3"]);
    }

    #[test]
    fn gate_lists_every_violation() {
        let r = gate_candidate(&scores(0.5, 0.1, 0.0));
        assert_eq!(r.reasons.len(), 3);
        let r = gate_candidate(&scores(f64::NAN, 0.5, 0.5));
        assert_eq!(r.reasons, vec!["clip_i below 0.75"]);
    }

    fn record(src: &str, e: EmotionLabel, status: ReviewStatus) -> PairRecord {
        PairRecord {
            id: PairRecord::pair_id(src, e),
            source_id: src.into(),
            source_hash: "s".into(),
            emotion: e,
            target_id: "t".into(),
            instruction: "Add x".into(),
            factor_summary: "x".into(),
            scores: scores(0.8, 0.3, 0.5),
            review_status: status,
        }
    }

    #[test]
    fn stats_single_pair_and_empty() {
        let s = dataset_stats(&[record("a", EmotionLabel::Awe, ReviewStatus::Accepted)]);
        assert_eq!((s.source_count, s.pair_count, s.mean_directions_per_source), (1, 1, 1.0));
        let s = dataset_stats(&[record("a", EmotionLabel::Awe, ReviewStatus::Pending)]);
        assert_eq!((s.source_count, s.pair_count, s.mean_directions_per_source), (0, 0, 0.0));
    }
}
