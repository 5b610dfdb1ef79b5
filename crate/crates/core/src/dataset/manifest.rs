use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{gate_candidate_with, GateConfig, PairRecord, ReviewStatus};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "pairs.mjson";
pub const IMAGES_DIR: &str = "images";
pub const REVIEWS_FILE: &str = "reviews.log";

const FORMAT: &str = "emoforge-pairs";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReviewMode {
    /// Records start pending and need a human decision.
    Manual,
    /// Records were accepted without review; for synthetic runs only.
    AutoAcceptedUnreviewed,
}

/// First line of the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub format: String,
    pub version: u32,
    pub review_mode: ReviewMode,
    pub seed: u64,
    pub gate: GateConfig,
}

impl ManifestHeader {
    pub fn new(review_mode: ReviewMode, seed: u64, gate: GateConfig) -> Self {
        Self { format: FORMAT.into(), version: VERSION, review_mode, seed, gate }
    }
}

/// Line-delimited pair records behind a header line, in creation order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub header: ManifestHeader,
    pub records: Vec<PairRecord>,
}

fn corrupt(path: &Path, message: impl Into<String>) -> Error {
    Error::Corrupt { path: path.to_path_buf(), message: message.into() }
}

impl Manifest {
    pub fn path(dir: &Path) -> PathBuf {
        dir.join(MANIFEST_FILE)
    }

    pub fn image_path(dir: &Path, hash: &str) -> PathBuf {
        dir.join(IMAGES_DIR).join(format!("{hash}.png"))
    }

    pub fn get(&self, id: &str) -> Option<&PairRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    pub fn source_count(&self) -> usize {
        self.records.iter().map(|r| r.source_id.as_str()).collect::<HashSet<_>>().len()
    }

    /// Accepted records.
    pub fn pair_count(&self) -> usize {
        self.records.iter().filter(|r| r.review_status == ReviewStatus::Accepted).count()
    }

    pub fn accepted(&self) -> impl Iterator<Item = &PairRecord> {
        self.records.iter().filter(|r| r.review_status == ReviewStatus::Accepted)
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = serde_json::to_string(&self.header)?;
        out.push('\n');
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    /// Parses and checks the record invariants: unique ids, non-empty
    /// instructions, and every accepted record passing the gate.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines.next().ok_or_else(|| corrupt(path, "empty manifest"))?;
        let header: ManifestHeader =
            serde_json::from_str(first).map_err(|e| corrupt(path, format!("header: {e}")))?;
        if header.format != FORMAT || header.version != VERSION {
            return Err(corrupt(path, format!("unsupported format {} v{}", header.format, header.version)));
        }
        let mut records = Vec::new();
        let mut seen = HashSet::new();
        for (n, line) in lines {
            let r: PairRecord = serde_json::from_str(line).map_err(|e| corrupt(path, format!("line {}: {e}", n + 1)))?;
            if !seen.insert(r.id.clone()) {
                return Err(corrupt(path, format!("duplicate record id {}", r.id)));
            }
            if r.instruction.trim().is_empty() {
                return Err(corrupt(path, format!("record {} has an empty instruction", r.id)));
            }
            records.push(r);
        }
        let m = Self { header, records };
        m.check_gate().map_err(|msg| corrupt(path, msg))?;
        Ok(m)
    }

    pub(crate) fn check_gate(&self) -> std::result::Result<(), String> {
        for r in self.accepted() {
            let g = gate_candidate_with(&r.scores, &self.header.gate);
            if !g.passed {
                return Err(format!("accepted record {} fails the gate: {}", r.id, g.reasons.join(", ")));
            }
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = Self::path(dir);
        if !path.exists() {
            return Err(Error::MissingArtifact { stage: "build-dataset", path });
        }
        Self::parse(&fs::read_to_string(&path)?, &path)
    }

    /// Writes `pairs.mjson` via a temporary file and rename.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let tmp = dir.join(format!("{MANIFEST_FILE}.tmp"));
        fs::write(&tmp, self.to_jsonl()?)?;
        fs::rename(&tmp, Self::path(dir))?;
        Ok(())
    }

    /// Every referenced image is present under `images/`.
    pub fn verify_images(&self, dir: &Path) -> Result<()> {
        for r in &self.records {
            for hash in [&r.source_hash, &r.target_id] {
                let p = Self::image_path(dir, hash);
                if !p.is_file() {
                    return Err(corrupt(&Self::path(dir), format!("record {} references missing {}", r.id, p.display())));
                }
            }
        }
        Ok(())
    }
}
