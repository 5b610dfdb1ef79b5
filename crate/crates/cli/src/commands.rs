use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use emoforge_core::config::PipelineConfig;
use emoforge_core::evaluation::format_table;
use emoforge_core::pipeline::{self, TrainingData};
use emoforge_core::providers::{PluginRegistry, ProviderSuite};
use emoforge_core::review::ReviewStore;
use emoforge_core::EmotionLabel;

/// Exit status for usage errors, matching clap's.
pub const USAGE_EXIT: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "emoforge", version, about = "Emotion-conditioned image editing pipeline")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Pipeline configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory holding every stage's artifacts.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build one factor tree per emotion.
    Attribute,
    /// Generate, gate and select source–emotion–target pairs.
    BuildDataset {
        /// Accept every selected pair without review (synthetic runs only).
        #[arg(long)]
        auto_accept: bool,
    },
    /// Print dataset statistics after review.
    Stats,
    /// Train the emotion adapter.
    Train {
        #[arg(long)]
        steps: Option<u64>,
        /// Train on the synthetic 64-pair set and require the loss to halve.
        #[arg(long)]
        fixture: bool,
    },
    /// Edit an image towards an emotion word with the trained adapter.
    Edit {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        emotion: EmotionLabel,
        /// Image guidance scales; one output per value.
        #[arg(long = "image-scale", value_delimiter = ',', num_args = 1..)]
        image_scales: Vec<f64>,
        #[arg(long = "conditioning-scale")]
        conditioning_scale: Option<f64>,
    },
    /// Compute the metric table over the dataset's pairs.
    Evaluate,
    /// Serve the review queue over HTTP.
    ReviewServe {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
}

fn usage_error(msg: &str) -> ExitCode {
    eprintln!("error: {msg}\n\nUsage: emoforge --config <PATH> [--seed <N>] [--out <DIR>] <COMMAND>");
    ExitCode::from(USAGE_EXIT)
}

fn suite_for(cfg: &PipelineConfig) -> anyhow::Result<ProviderSuite> {
    Ok(cfg.build_suite(&PluginRegistry::default())?)
}

pub fn run(cli: Cli) -> ExitCode {
    let Some(config_path) = cli.common.config.as_deref() else {
        return usage_error("--config is required");
    };
    if !config_path.is_file() {
        return usage_error(&format!("config file {} does not exist", config_path.display()));
    }
    match execute(config_path, &cli.common, cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn execute(config_path: &Path, common: &Common, command: Command) -> anyhow::Result<ExitCode> {
    let mut cfg = PipelineConfig::load(config_path)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    let out = common.out.as_path();
    match command {
        Command::Attribute => {
            let suite = suite_for(&cfg)?;
            let outcome = pipeline::run_attribute(&cfg, &suite, out)?;
            for t in &outcome.trees {
                println!("{:<12} {} factors", t.emotion.word(), t.factor_count);
            }
            let empty = outcome.empty_emotions();
            if !empty.is_empty() {
                let names: Vec<&str> = empty.iter().map(|e| e.word()).collect();
                eprintln!("error: empty factor trees for {}", names.join(", "));
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::BuildDataset { auto_accept } => {
            cfg.dataset.auto_accept |= auto_accept;
            let suite = suite_for(&cfg)?;
            let outcome = pipeline::run_build_dataset(&cfg, &suite, out)?;
            println!(
                "{} candidates, {} passed the gate, {} pairs written{}",
                outcome.candidates_generated,
                outcome.candidates_passed,
                outcome.manifest.records.len(),
                if cfg.dataset.auto_accept { " (auto-accepted, unreviewed)" } else { " (pending review)" }
            );
        }
        Command::Stats => {
            println!("{}", serde_json::to_string_pretty(&pipeline::run_stats(out)?)?);
        }
        Command::Train { steps, fixture } => {
            if let Some(s) = steps {
                cfg.training.steps = s;
            }
            let suite = suite_for(&cfg)?;
            let data = if fixture { TrainingData::Fixture } else { TrainingData::Manifest };
            let outcome = pipeline::run_train(&cfg, &suite, out, data)?;
            let ratio = outcome.loss_ratio();
            println!(
                "trained {} steps on {} pairs; backbone {}",
                outcome.state.step,
                outcome.examples,
                if outcome.fingerprint_before == outcome.fingerprint_after { "unchanged" } else { "CHANGED" }
            );
            if let Some(r) = ratio {
                println!("final/initial 10-step mean loss: {r:.3}");
            }
            if outcome.fingerprint_before != outcome.fingerprint_after {
                return Ok(ExitCode::FAILURE);
            }
            if fixture && !ratio.is_some_and(|r| r <= 0.5) {
                eprintln!("error: loss did not halve on the fixture set");
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Edit { image, emotion, image_scales, conditioning_scale } => {
            let suite = suite_for(&cfg)?;
            let scales = if image_scales.is_empty() { vec![cfg.edit.scales.image] } else { image_scales };
            let s_e = conditioning_scale.unwrap_or(cfg.edit.scales.conditioning);
            for p in pipeline::run_edit(&cfg, &suite, out, &image, emotion, &scales, s_e)? {
                println!("{}", p.display());
            }
        }
        Command::Evaluate => {
            let suite = suite_for(&cfg)?;
            print!("{}", format_table(&pipeline::run_evaluate(&cfg, &suite, out)?));
        }
        Command::ReviewServe { port, host } => {
            let store = Arc::new(ReviewStore::open(&out.join(pipeline::DATASET_DIR))?);
            let addr = format!("{host}:{port}").parse().with_context(|| format!("bad address {host}:{port}"))?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(crate::server::serve(store, addr))?;
        }
    }
    Ok(ExitCode::SUCCESS)
}
