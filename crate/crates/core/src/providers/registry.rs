use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use tracing::warn;

use super::mock::MockWorld;
use super::{
    AestheticScorer, Editor, EmotionClassifier, ImageEncoder, LatentCodec, PerceptualDistance, ProviderSuite,
    TextEncoder, VlmSummarizer,
};
use crate::error::{invalid, Error, Result};

/// Environment variable overriding `providers.<role>` selections,
/// formatted as `role=plugin[,role=plugin...]`.
pub const PROVIDERS_ENV: &str = "EMOFORGE_PROVIDERS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderRole {
    ImageEncoder,
    TextEncoder,
    EmotionClassifier,
    AestheticScorer,
    Editor,
    VlmSummarizer,
    LatentCodec,
    Lpips,
}

impl ProviderRole {
    pub const ALL: [ProviderRole; 8] = [
        ProviderRole::ImageEncoder,
        ProviderRole::TextEncoder,
        ProviderRole::EmotionClassifier,
        ProviderRole::AestheticScorer,
        ProviderRole::Editor,
        ProviderRole::VlmSummarizer,
        ProviderRole::LatentCodec,
        ProviderRole::Lpips,
    ];

    pub fn key(self) -> &'static str {
        match self {
            ProviderRole::ImageEncoder => "image_encoder",
            ProviderRole::TextEncoder => "text_encoder",
            ProviderRole::EmotionClassifier => "emotion_classifier",
            ProviderRole::AestheticScorer => "aesthetic_scorer",
            ProviderRole::Editor => "editor",
            ProviderRole::VlmSummarizer => "vlm_summarizer",
            ProviderRole::LatentCodec => "latent_codec",
            ProviderRole::Lpips => "lpips",
        }
    }
}

impl fmt::Display for ProviderRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for ProviderRole {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|r| r.key() == s.trim())
            .ok_or_else(|| invalid(format!("unknown provider role `{s}`")))
    }
}

/// Parameters every plugin factory receives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuiteSettings {
    /// Width of token and pooled embeddings.
    pub dim: usize,
    pub seed: u64,
}

impl Default for SuiteSettings {
    fn default() -> Self {
        Self { dim: 32, seed: 0 }
    }
}

/// Providers a plugin offers; roles it does not cover stay `None`.
#[derive(Default, Clone)]
pub struct PluginSet {
    pub image_encoder: Option<Arc<dyn ImageEncoder>>,
    pub text_encoder: Option<Arc<dyn TextEncoder>>,
    pub emotion_classifier: Option<Arc<dyn EmotionClassifier>>,
    pub aesthetic_scorer: Option<Arc<dyn AestheticScorer>>,
    pub editor: Option<Arc<dyn Editor>>,
    pub vlm: Option<Arc<dyn VlmSummarizer>>,
    pub latent_codec: Option<Arc<dyn LatentCodec>>,
    pub lpips: Option<Arc<dyn PerceptualDistance>>,
}

impl From<ProviderSuite> for PluginSet {
    fn from(s: ProviderSuite) -> Self {
        Self {
            image_encoder: Some(s.image_encoder),
            text_encoder: Some(s.text_encoder),
            emotion_classifier: Some(s.emotion_classifier),
            aesthetic_scorer: Some(s.aesthetic_scorer),
            editor: Some(s.editor),
            vlm: Some(s.vlm),
            latent_codec: Some(s.latent_codec),
            lpips: s.lpips,
        }
    }
}

pub type PluginFactory = Arc<dyn Fn(&SuiteSettings) -> Result<PluginSet> + Send + Sync>;

/// Plugins by name. `mock` is always registered.
#[derive(Clone)]
pub struct PluginRegistry {
    plugins: BTreeMap<String, PluginFactory>,
}

impl Default for PluginRegistry {
    fn default() -> Self {
        let mut r = Self { plugins: BTreeMap::new() };
        r.register("mock", Arc::new(|s: &SuiteSettings| Ok(MockWorld::new(*s).suite().into())));
        r
    }
}

impl PluginRegistry {
    pub fn register(&mut self, name: impl Into<String>, factory: PluginFactory) {
        self.plugins.insert(name.into(), factory);
    }

    pub fn names(&self) -> Vec<&str> {
        self.plugins.keys().map(String::as_str).collect()
    }

    /// Builds a suite from `role key → plugin name`. Unselected roles use the
    /// mock (LPIPS stays absent). A missing plugin or one that does not
    /// provide the role falls back to the mock with a warning.
    pub fn build(&self, selection: &BTreeMap<String, String>, settings: SuiteSettings) -> Result<ProviderSuite> {
        for key in selection.keys() {
            key.parse::<ProviderRole>()?;
        }
        let mock = MockWorld::new(settings).suite();
        let mut loaded: BTreeMap<&str, Option<PluginSet>> = BTreeMap::new();
        for name in selection.values() {
            if name == "mock" || name == "none" || loaded.contains_key(name.as_str()) {
                continue;
            }
            let set = match self.plugins.get(name) {
                Some(f) => match f(&settings) {
                    Ok(set) => Some(set),
                    Err(e) => {
                        warn!(plugin = %name, error = %e, "provider plugin failed to load; using mocks");
                        None
                    }
                },
                None => {
                    warn!(plugin = %name, "provider plugin not available; using mocks");
                    None
                }
            };
            loaded.insert(name.as_str(), set);
        }

        macro_rules! pick {
            ($role:expr, $field:ident) => {{
                match selection.get($role.key()).map(String::as_str) {
                    None | Some("mock") => mock.$field.clone(),
                    Some(name) => match loaded.get(name).and_then(|s| s.as_ref()).and_then(|s| s.$field.clone()) {
                        Some(p) => p,
                        None => {
                            if loaded.get(name).map_or(false, |s| s.is_some()) {
                                warn!(plugin = %name, role = %$role, "plugin does not provide this role; using mock");
                            }
                            mock.$field.clone()
                        }
                    },
                }
            }};
        }

        let lpips = match selection.get(ProviderRole::Lpips.key()).map(String::as_str) {
            None | Some("none") | Some("mock") => None,
            Some(name) => {
                let p = loaded.get(name).and_then(|s| s.as_ref()).and_then(|s| s.lpips.clone());
                if p.is_none() {
                    warn!(plugin = %name, "no LPIPS provider available; the column will be omitted");
                }
                p
            }
        };

        let suite = ProviderSuite {
            image_encoder: pick!(ProviderRole::ImageEncoder, image_encoder),
            text_encoder: pick!(ProviderRole::TextEncoder, text_encoder),
            emotion_classifier: pick!(ProviderRole::EmotionClassifier, emotion_classifier),
            aesthetic_scorer: pick!(ProviderRole::AestheticScorer, aesthetic_scorer),
            editor: pick!(ProviderRole::Editor, editor),
            vlm: pick!(ProviderRole::VlmSummarizer, vlm),
            latent_codec: pick!(ProviderRole::LatentCodec, latent_codec),
            lpips,
        };
        if suite.image_encoder.dim() != settings.dim || suite.text_encoder.dim() != settings.dim {
            return Err(invalid(format!(
                "encoders produce width {}/{} but the suite expects {}",
                suite.image_encoder.dim(),
                suite.text_encoder.dim(),
                settings.dim
            )));
        }
        Ok(suite.serialize_non_reentrant())
    }
}

/// Parses `role=plugin,role=plugin` into selection entries.
pub fn parse_selection_override(raw: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for part in raw.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (role, name) = part
            .split_once('=')
            .ok_or_else(|| invalid(format!("expected role=plugin, got `{part}`")))?;
        let role: ProviderRole = role.trim().parse()?;
        out.insert(role.key().to_string(), name.trim().to_string());
    }
    Ok(out)
}
