//! The pipeline stages behind the command-line tool. Each stage reads the
//! previous stage's artifacts from the output directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::adapter::{AdapterParams, ImageEmbedding};
use crate::attribution::{build_tree, FactorTree, TreeMetadata};
use crate::config::PipelineConfig;
use crate::dataset::{build_dataset, dataset_stats, BuildOutcome, DatasetStats, Manifest, PairRecord, REVIEWS_FILE};
use crate::emotion::EmotionLabel;
use crate::error::{invalid, Error, Result};
use crate::evaluation::{evaluate, format_table, EvalPair, MetricReport};
use crate::providers::mock::{synthetic_corpus, synthetic_sources};
use crate::providers::{hash_seed, load_png, save_png, EditCondition, GuidanceScales, ImageRef, ProviderSuite, SourceTag};
use crate::review::{read_log, replay};
use crate::training::fixtures::synthetic_training_set;
use crate::training::{moving_average, train, Denoiser, ToyDenoiser, TrainLog, TrainState, TrainingExample};

pub const TREES_DIR: &str = "trees";
pub const DATASET_DIR: &str = "dataset";
pub const TRAIN_DIR: &str = "train";
pub const EDITS_DIR: &str = "edits";
pub const EVAL_DIR: &str = "eval";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const TRAIN_LOG_FILE: &str = "train.log.jsonl";

fn missing(stage: &'static str, path: PathBuf) -> Error {
    Error::MissingArtifact { stage, path }
}

fn png_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    Ok(files)
}

fn image_ref(path: &Path, id: String, tag: SourceTag) -> Result<ImageRef> {
    ImageRef::new(id, load_png(path)?, tag)
}

fn file_stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Attribution images grouped by emotion.
pub fn load_corpus(cfg: &PipelineConfig) -> Result<Vec<(EmotionLabel, ImageRef)>> {
    let c = &cfg.corpus;
    let Some(dir) = &c.dir else {
        return Ok(synthetic_corpus(c.per_motif, c.background, cfg.seed, c.image_size));
    };
    let mut out = Vec::new();
    for e in EmotionLabel::ALL {
        let sub = dir.join(e.word());
        if !sub.is_dir() {
            continue;
        }
        for p in png_files(&sub)? {
            out.push((e, image_ref(&p, format!("{e}/{}", file_stem(&p)), SourceTag::CollectionA)?));
        }
    }
    if out.is_empty() {
        return Err(invalid(format!("no PNG images under {}/<emotion>/", dir.display())));
    }
    Ok(out)
}

pub fn load_sources(cfg: &PipelineConfig) -> Result<Vec<ImageRef>> {
    let s = &cfg.sources;
    let Some(dir) = &s.dir else {
        return Ok(synthetic_sources(s.count, cfg.seed, s.image_size));
    };
    png_files(dir)?.iter().map(|p| image_ref(p, file_stem(p), SourceTag::CollectionA)).collect()
}

pub struct AttributeOutcome {
    pub trees: Vec<FactorTree>,
    pub paths: Vec<PathBuf>,
}

impl AttributeOutcome {
    pub fn empty_emotions(&self) -> Vec<EmotionLabel> {
        self.trees.iter().filter(|t| t.is_empty()).map(|t| t.emotion).collect()
    }
}

/// Builds and writes one factor tree per emotion.
pub fn run_attribute(cfg: &PipelineConfig, suite: &ProviderSuite, out: &Path) -> Result<AttributeOutcome> {
    let corpus = load_corpus(cfg)?;
    let dir = out.join(TREES_DIR);
    fs::create_dir_all(&dir)?;
    let mut outcome = AttributeOutcome { trees: Vec::new(), paths: Vec::new() };
    for e in EmotionLabel::ALL {
        let images: Vec<&ImageRef> = corpus.iter().filter(|(x, _)| *x == e).map(|(_, i)| i).collect();
        let tree = if images.is_empty() {
            tracing::warn!(emotion = %e, "no attribution images");
            let a = &cfg.attribution;
            let metadata = TreeMetadata {
                k: a.k_for(e),
                seed: cfg.seed,
                clusters_found: 0,
                clusters_kept: 0,
                min_size: a.min_size,
                sim_cap: a.sim_cap,
                emo_floor: a.emo_floor,
                merge_threshold: a.merge_threshold,
            };
            FactorTree::new(e, Vec::new(), metadata)
        } else {
            build_tree(e, &images, &cfg.attribution, cfg.seed, suite)?
        };
        outcome.paths.push(tree.save(&dir)?);
        outcome.trees.push(tree);
    }
    Ok(outcome)
}

pub fn load_trees(out: &Path) -> Result<BTreeMap<EmotionLabel, FactorTree>> {
    let dir = out.join(TREES_DIR);
    let mut trees = BTreeMap::new();
    for e in EmotionLabel::ALL {
        let path = dir.join(FactorTree::file_name(e));
        if !path.is_file() {
            return Err(missing("attribute", path));
        }
        trees.insert(e, FactorTree::load(&path)?);
    }
    Ok(trees)
}

/// Generates, gates and selects pairs into `<out>/dataset`. Refuses to
/// overwrite a dataset that already has review decisions.
pub fn run_build_dataset(cfg: &PipelineConfig, suite: &ProviderSuite, out: &Path) -> Result<BuildOutcome> {
    let trees = load_trees(out)?;
    let dir = out.join(DATASET_DIR);
    if dir.join(REVIEWS_FILE).is_file() && fs::metadata(dir.join(REVIEWS_FILE))?.len() > 0 {
        return Err(invalid(format!(
            "{} already holds review decisions; use a fresh output directory",
            dir.display()
        )));
    }
    if dir.exists() {
        fs::remove_dir_all(&dir)?;
    }
    build_dataset(&load_sources(cfg)?, &trees, suite, &cfg.dataset, cfg.seed, &dir)
}

/// The manifest with `reviews.log` replayed over it.
pub fn load_reviewed_manifest(out: &Path) -> Result<Manifest> {
    let dir = out.join(DATASET_DIR);
    let log = dir.join(REVIEWS_FILE);
    let m = replay(Manifest::load(&dir)?, &read_log(&log)?, &log)?;
    m.verify_images(&dir)?;
    Ok(m)
}

pub fn run_stats(out: &Path) -> Result<DatasetStats> {
    Ok(dataset_stats(&load_reviewed_manifest(out)?.records))
}

fn pair_images(dir: &Path, r: &PairRecord) -> Result<(RgbImage, RgbImage)> {
    Ok((
        load_png(&Manifest::image_path(dir, &r.source_hash))?,
        load_png(&Manifest::image_path(dir, &r.target_id))?,
    ))
}

pub fn examples_from_manifest(out: &Path, suite: &ProviderSuite) -> Result<Vec<TrainingExample>> {
    let m = load_reviewed_manifest(out)?;
    let dir = out.join(DATASET_DIR);
    m.accepted()
        .map(|r| {
            let (src, tgt) = pair_images(&dir, r)?;
            TrainingExample::encode(&r.id, &src, &tgt, r.emotion, &r.instruction, suite)
        })
        .collect()
}

pub fn backbone(cfg: &PipelineConfig) -> Result<ToyDenoiser> {
    Ok(ToyDenoiser::new(cfg.denoiser.clone(), cfg.training.schedule()?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrainingData {
    /// Accepted pairs of the built dataset.
    Manifest,
    /// The synthetic 64-pair set.
    Fixture,
}

pub struct TrainOutcome {
    pub state: TrainState,
    pub examples: usize,
    pub fingerprint_before: String,
    pub fingerprint_after: String,
}

impl TrainOutcome {
    /// Final 10-step average loss over the first 10-step average.
    pub fn loss_ratio(&self) -> Option<f64> {
        let h = &self.state.loss_history;
        let start = moving_average(h, 0, 10)?;
        let end = moving_average(h, h.len().checked_sub(10)?, 10)?;
        Some(end / start)
    }
}

/// Trains a fresh adapter for `cfg.training.steps` steps and writes the
/// checkpoint and loss log under `<out>/train`.
pub fn run_train(cfg: &PipelineConfig, suite: &ProviderSuite, out: &Path, data: TrainingData) -> Result<TrainOutcome> {
    let denoiser = backbone(cfg)?;
    let examples = match data {
        TrainingData::Manifest => examples_from_manifest(out, suite)?,
        TrainingData::Fixture => synthetic_training_set(suite, &denoiser, cfg.adapter.num_queries, 8, cfg.seed)?,
    };
    if examples.is_empty() {
        return Err(invalid("no accepted pairs to train on; review the dataset first"));
    }
    let dir = out.join(TRAIN_DIR);
    fs::create_dir_all(&dir)?;
    let log_path = dir.join(TRAIN_LOG_FILE);
    if log_path.exists() {
        fs::remove_file(&log_path)?;
    }
    let mut log = TrainLog::append(&log_path)?;
    let mut tcfg = cfg.training.clone();
    tcfg.seed = cfg.seed;
    let adapter = AdapterParams::init(cfg.adapter.clone(), cfg.seed)?;
    let fingerprint_before = denoiser.fingerprint();
    let state = TrainState::new(tcfg, adapter, &denoiser)?;
    let state = train(state, &examples, &denoiser, cfg.training.steps, Some(&mut log), Some(&dir))?;
    state.save(&dir.join(CHECKPOINT_FILE))?;
    Ok(TrainOutcome { examples: examples.len(), fingerprint_after: denoiser.fingerprint(), fingerprint_before, state })
}

/// Loads the checkpoint and checks it was trained against this config's
/// backbone.
pub fn load_checkpoint(cfg: &PipelineConfig, out: &Path) -> Result<TrainState> {
    let path = out.join(TRAIN_DIR).join(CHECKPOINT_FILE);
    if !path.is_file() {
        return Err(missing("train", path));
    }
    let state = TrainState::load(&path)?;
    let fp = backbone(cfg)?.fingerprint();
    if fp != state.backbone_fingerprint {
        return Err(invalid("the configured denoiser differs from the one the checkpoint was trained against"));
    }
    Ok(state)
}

/// Edits `img` towards `emotion` with the adapter's conditioning only.
pub fn edit_with_adapter(
    adapter: &AdapterParams,
    img: &RgbImage,
    emotion: EmotionLabel,
    suite: &ProviderSuite,
    scales: GuidanceScales,
    seed: u64,
) -> Result<RgbImage> {
    let e_i = ImageEmbedding::new(suite.image_encoder.encode_image(img)?.tokens)?;
    let c_e = crate::adapter::adapter_forward(adapter, emotion, &e_i, suite.text_encoder.as_ref())?;
    suite.editor.edit(img, &EditCondition::Embedding(c_e.into_inner()), scales, seed)
}

/// Edits one image at each image-guidance scale; outputs are named
/// `<stem>-<emotion>-sI<scale>.png`.
pub fn run_edit(
    cfg: &PipelineConfig,
    suite: &ProviderSuite,
    out: &Path,
    image: &Path,
    emotion: EmotionLabel,
    image_scales: &[f64],
    conditioning_scale: f64,
) -> Result<Vec<PathBuf>> {
    let state = load_checkpoint(cfg, out)?;
    if !image.is_file() {
        return Err(invalid(format!("input image {} not found", image.display())));
    }
    let img = load_png(image)?;
    let stem = file_stem(image);
    let seed = hash_seed(&[b"edit", &cfg.seed.to_le_bytes(), stem.as_bytes(), emotion.word().as_bytes()]);
    let dir = out.join(EDITS_DIR);
    fs::create_dir_all(&dir)?;
    let mut written = Vec::new();
    for &s_i in image_scales {
        let scales = GuidanceScales { image: s_i, conditioning: conditioning_scale };
        scales.validate()?;
        let edited = edit_with_adapter(&state.adapter, &img, emotion, suite, scales, seed)?;
        let path = dir.join(format!("{stem}-{emotion}-sI{s_i:.2}.png"));
        save_png(&edited, &path)?;
        written.push(path);
    }
    Ok(written)
}

/// Three rows: unedited sources, the dataset's instruction-edited targets,
/// and adapter edits. Uses accepted pairs, or every pair if none is
/// accepted yet.
pub fn run_evaluate(cfg: &PipelineConfig, suite: &ProviderSuite, out: &Path) -> Result<Vec<MetricReport>> {
    let state = load_checkpoint(cfg, out)?;
    let m = load_reviewed_manifest(out)?;
    let dir = out.join(DATASET_DIR);
    let records: Vec<&PairRecord> = if m.pair_count() > 0 { m.accepted().collect() } else { m.records.iter().collect() };
    let (mut identity, mut targets, mut adapter) = (Vec::new(), Vec::new(), Vec::new());
    for r in records {
        let (src, tgt) = pair_images(&dir, r)?;
        let seed = hash_seed(&[b"evaluate", &cfg.seed.to_le_bytes(), r.id.as_bytes()]);
        let edited = edit_with_adapter(&state.adapter, &src, r.emotion, suite, cfg.edit.scales, seed)?;
        let pair = |edited: RgbImage| EvalPair { id: r.id.clone(), emotion: r.emotion, source: src.clone(), edited };
        identity.push(pair(src.clone()));
        targets.push(pair(tgt));
        adapter.push(pair(edited));
    }
    let reports = vec![
        evaluate("identity", &identity, suite, &cfg.evaluation)?,
        evaluate("instruction-target", &targets, suite, &cfg.evaluation)?,
        evaluate("emotion-adapter", &adapter, suite, &cfg.evaluation)?,
    ];
    let eval_dir = out.join(EVAL_DIR);
    fs::create_dir_all(&eval_dir)?;
    let mut jsonl = String::new();
    for r in &reports {
        jsonl.push_str(&r.to_jsonl()?);
    }
    fs::write(eval_dir.join("report.jsonl"), jsonl)?;
    fs::write(eval_dir.join("table.txt"), format_table(&reports))?;
    Ok(reports)
}
