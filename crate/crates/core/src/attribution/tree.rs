use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Factor;
use crate::emotion::EmotionLabel;
use crate::error::{Error, Result};

/// Settings a tree was built with, kept alongside it for reproducibility.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeMetadata {
    pub k: usize,
    pub seed: u64,
    pub clusters_found: usize,
    pub clusters_kept: usize,
    pub min_size: usize,
    pub sim_cap: f64,
    pub emo_floor: f64,
    pub merge_threshold: f64,
}

/// Root emotion with factor leaves. Persisted as TOML with a fixed key order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorTree {
    pub emotion: EmotionLabel,
    pub factor_count: usize,
    /// Set when filtering left no factors.
    pub empty: bool,
    pub metadata: TreeMetadata,
    #[serde(default)]
    pub factors: Vec<Factor>,
}

impl FactorTree {
    pub fn new(emotion: EmotionLabel, factors: Vec<Factor>, metadata: TreeMetadata) -> Self {
        Self {
            emotion,
            factor_count: factors.len(),
            empty: factors.is_empty(),
            metadata,
            factors,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Validation(format!("tree serialization: {e}")))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let tree: Self = toml::from_str(text).map_err(|e| Error::Validation(format!("tree parse: {e}")))?;
        if tree.factor_count != tree.factors.len() {
            return Err(Error::Validation(format!(
                "factor_count {} does not match {} factors",
                tree.factor_count,
                tree.factors.len()
            )));
        }
        Ok(tree)
    }

    pub fn file_name(emotion: EmotionLabel) -> String {
        format!("{emotion}.tree.toml")
    }

    pub fn save(&self, dir: &Path) -> Result<std::path::PathBuf> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(Self::file_name(self.emotion));
        std::fs::write(&path, self.to_toml()?)?;
        Ok(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| Error::Corrupt { path: path.to_path_buf(), message: e.to_string() })
    }
}
