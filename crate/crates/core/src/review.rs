//! Human review of pending pairs: an append-only decision log replayed over
//! the pair manifest.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::dataset::{gate_candidate_with, CandidateScores, GateResult, Manifest, PairRecord, ReviewStatus, IMAGES_DIR, REVIEWS_FILE};
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Accept,
    Reject,
}

impl Decision {
    pub fn status(self) -> ReviewStatus {
        match self {
            Self::Accept => ReviewStatus::Accepted,
            Self::Reject => ReviewStatus::Rejected,
        }
    }
}

/// One line of `reviews.log`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewEntry {
    pub id: String,
    pub decision: Decision,
    pub reviewer: String,
    /// Milliseconds since the Unix epoch.
    pub timestamp_ms: u64,
}

/// Applies one decision. Only pending records may change, and only to
/// accepted or rejected; anything else leaves `manifest` untouched.
pub fn apply_decision(manifest: &mut Manifest, id: &str, decision: Decision) -> Result<()> {
    let gate = manifest.header.gate;
    let record = manifest.records.iter_mut().find(|r| r.id == id).ok_or_else(|| Error::NotFound(id.to_string()))?;
    if record.review_status != ReviewStatus::Pending {
        return Err(Error::Conflict { id: id.to_string(), status: record.review_status.to_string() });
    }
    if decision == Decision::Accept {
        let g = gate_candidate_with(&record.scores, &gate);
        if !g.passed {
            return Err(invalid(format!("record {id} fails the gate: {}", g.reasons.join(", "))));
        }
    }
    record.review_status = decision.status();
    Ok(())
}

pub fn read_log(path: &Path) -> Result<Vec<ReviewEntry>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    fs::read_to_string(path)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            serde_json::from_str(l)
                .map_err(|e| Error::Corrupt { path: path.to_path_buf(), message: format!("line {}: {e}", n + 1) })
        })
        .collect()
}

/// Manifest state after applying `entries` in order. Any illegal entry makes
/// the log corrupt.
pub fn replay(mut manifest: Manifest, entries: &[ReviewEntry], log_path: &Path) -> Result<Manifest> {
    for (n, e) in entries.iter().enumerate() {
        apply_decision(&mut manifest, &e.id, e.decision).map_err(|err| Error::Corrupt {
            path: log_path.to_path_buf(),
            message: format!("entry {}: {err}", n + 1),
        })?;
    }
    Ok(manifest)
}

/// What the review frontend shows for one pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewItem {
    pub id: String,
    pub source_image: String,
    pub candidate_image: String,
    pub instruction: String,
    pub emotion: crate::EmotionLabel,
    pub factor_summary: String,
    pub scores: CandidateScores,
    pub gate: GateResult,
    pub status: ReviewStatus,
}

impl ReviewItem {
    fn new(r: &PairRecord, manifest: &Manifest) -> Self {
        Self {
            id: r.id.clone(),
            source_image: format!("{IMAGES_DIR}/{}.png", r.source_hash),
            candidate_image: format!("{IMAGES_DIR}/{}.png", r.target_id),
            instruction: r.instruction.clone(),
            emotion: r.emotion,
            factor_summary: r.factor_summary.clone(),
            scores: r.scores,
            gate: gate_candidate_with(&r.scores, &manifest.header.gate),
            status: r.review_status,
        }
    }
}

struct Inner {
    manifest: Manifest,
    log: File,
}

/// The single writer for review decisions on one dataset directory.
pub struct ReviewStore {
    dir: PathBuf,
    inner: Mutex<Inner>,
}

impl ReviewStore {
    /// Loads the manifest and replays `reviews.log` over it.
    pub fn open(dir: &Path) -> Result<Self> {
        let log_path = dir.join(REVIEWS_FILE);
        let manifest = replay(Manifest::load(dir)?, &read_log(&log_path)?, &log_path)?;
        let log = OpenOptions::new().create(true).append(true).open(&log_path)?;
        Ok(Self { dir: dir.to_path_buf(), inner: Mutex::new(Inner { manifest, log }) })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn snapshot(&self) -> Manifest {
        self.lock().manifest.clone()
    }

    /// Up to `limit` pending items in creation order.
    pub fn queue(&self, limit: usize) -> Vec<ReviewItem> {
        let inner = self.lock();
        let m = &inner.manifest;
        m.records
            .iter()
            .filter(|r| r.review_status == ReviewStatus::Pending)
            .take(limit)
            .map(|r| ReviewItem::new(r, m))
            .collect()
    }

    pub fn pending_count(&self) -> usize {
        self.lock().manifest.records.iter().filter(|r| r.review_status == ReviewStatus::Pending).count()
    }

    pub fn item(&self, id: &str) -> Result<ReviewItem> {
        let inner = self.lock();
        let m = &inner.manifest;
        m.get(id).map(|r| ReviewItem::new(r, m)).ok_or_else(|| Error::NotFound(id.to_string()))
    }

    /// Records a decision: validated against current state, appended to the
    /// log, then applied. The first decision on a record wins.
    pub fn decide(&self, id: &str, decision: Decision, reviewer: &str) -> Result<ReviewItem> {
        let mut inner = self.lock();
        let mut next = inner.manifest.clone();
        apply_decision(&mut next, id, decision)?;
        let entry = ReviewEntry {
            id: id.to_string(),
            decision,
            reviewer: reviewer.to_string(),
            timestamp_ms: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0),
        };
        let mut line = serde_json::to_vec(&entry)?;
        line.push(b'\n');
        inner.log.write_all(&line)?;
        inner.log.flush()?;
        inner.manifest = next;
        let m = &inner.manifest;
        Ok(ReviewItem::new(m.get(id).expect("applied above"), m))
    }

    /// Path of an image under the dataset's image directory, if the name is
    /// a plain `<hash>.png`.
    pub fn image_path(&self, file_name: &str) -> Option<PathBuf> {
        let hash = file_name.strip_suffix(".png")?;
        if hash.is_empty() || !hash.chars().all(|c| c.is_ascii_hexdigit()) {
            return None;
        }
        Some(Manifest::image_path(&self.dir, hash))
    }
}
