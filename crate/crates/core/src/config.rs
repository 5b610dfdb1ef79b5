//! Pipeline configuration, read from TOML.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adapter::AdapterConfig;
use crate::attribution::AttributionConfig;
use crate::dataset::BuildConfig;
use crate::error::{Error, Result};
use crate::evaluation::SsimConfig;
use crate::providers::{parse_selection_override, GuidanceScales, PluginRegistry, ProviderSuite, SuiteSettings, PROVIDERS_ENV};
use crate::training::{ToyDenoiserConfig, TrainConfig};

/// Where attribution images come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    /// Directory with one sub-directory of PNGs per emotion. Without it a
    /// synthetic corpus is generated.
    pub dir: Option<PathBuf>,
    pub per_motif: usize,
    pub background: usize,
    pub image_size: u32,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self { dir: None, per_motif: 24, background: 10, image_size: 32 }
    }
}

/// Source images to edit when building pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SourcesConfig {
    /// Directory of PNGs; otherwise `count` synthetic sources.
    pub dir: Option<PathBuf>,
    pub count: usize,
    pub image_size: u32,
}

impl Default for SourcesConfig {
    fn default() -> Self {
        Self { dir: None, count: 10, image_size: 32 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EditConfig {
    pub scales: GuidanceScales,
}

impl Default for EditConfig {
    fn default() -> Self {
        Self { scales: GuidanceScales::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Embedding width shared by the encoders and the adapter.
    pub dim: usize,
    /// `role = "plugin"`.
    pub providers: BTreeMap<String, String>,
    pub corpus: CorpusConfig,
    pub sources: SourcesConfig,
    pub attribution: AttributionConfig,
    pub dataset: BuildConfig,
    pub adapter: AdapterConfig,
    pub training: TrainConfig,
    pub denoiser: ToyDenoiserConfig,
    pub edit: EditConfig,
    pub evaluation: SsimConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            dim: 32,
            providers: BTreeMap::new(),
            corpus: CorpusConfig::default(),
            sources: SourcesConfig::default(),
            attribution: AttributionConfig::default(),
            dataset: BuildConfig::default(),
            adapter: AdapterConfig::default(),
            training: TrainConfig::default(),
            denoiser: ToyDenoiserConfig::default(),
            edit: EditConfig::default(),
            evaluation: SsimConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Validation(format!("config: {e}")))
    }

    /// Reads a config file; relative data directories resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Validation(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for dir in [&mut cfg.corpus.dir, &mut cfg.sources.dir].into_iter().flatten() {
            if dir.is_relative() {
                *dir = base.join(&*dir);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Validation(format!("config: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        self.adapter.validate()?;
        self.training.validate()?;
        self.dataset.scales.validate()?;
        self.edit.scales.validate()?;
        if self.adapter.dim != self.dim || self.denoiser.dim != self.dim {
            return Err(Error::Validation(format!(
                "adapter.dim ({}) and denoiser.dim ({}) must equal dim ({})",
                self.adapter.dim, self.denoiser.dim, self.dim
            )));
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Config selection overlaid with `EMOFORGE_PROVIDERS`, if set.
    pub fn provider_selection(&self) -> Result<BTreeMap<String, String>> {
        let mut sel = self.providers.clone();
        if let Ok(raw) = std::env::var(PROVIDERS_ENV) {
            sel.extend(parse_selection_override(&raw)?);
        }
        Ok(sel)
    }

    pub fn build_suite(&self, registry: &PluginRegistry) -> Result<ProviderSuite> {
        let settings = SuiteSettings { dim: self.dim, seed: self.seed };
        Ok(registry.build(&self.provider_selection()?, settings)?.serialize_non_reentrant())
    }
}
