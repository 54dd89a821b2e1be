//! Run settings: defaults, then an optional TOML file, then command-line flags.

use std::path::{Path, PathBuf};

use clap::Args;
use emn_core::{AdaptationConfig, EmnError, HyperParams, PipelineConfig, Result};
use serde::Deserialize;

/// Keys accepted in the `--config` file. Every key is optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub beta: Option<f64>,
    pub sigma1: Option<f64>,
    pub hub: Option<usize>,
    pub bridging: Option<usize>,
    pub in_degree: Option<usize>,
    pub rounds: Option<usize>,
    pub seed: Option<u64>,
    pub fuzzy: Option<bool>,
    pub confidence: Option<bool>,
    pub snapshot_dir: Option<PathBuf>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| EmnError::Config(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| EmnError::Config(format!("{}: {e}", path.display())))
    }
}

/// Model and adaptation knobs shared by several subcommands.
#[derive(Debug, Clone, Default, Args)]
pub struct Knobs {
    /// Adaptation epochs
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Mini-batch size for training and adaptation
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// EMA coefficient in [0, 1)
    #[arg(long)]
    pub beta: Option<f64>,
    /// Blur kernel variance
    #[arg(long)]
    pub sigma1: Option<f64>,
    /// Number of hub nodes
    #[arg(long)]
    pub hub: Option<usize>,
    /// Number of bridging nodes
    #[arg(long)]
    pub bridging: Option<usize>,
    /// Predecessors per bridging node
    #[arg(long)]
    pub in_degree: Option<usize>,
    /// Propagation rounds
    #[arg(long)]
    pub rounds: Option<usize>,
    /// Seed for the topology and every shuffle
    #[arg(long)]
    pub seed: Option<u64>,
    /// Use the plain Gaussian density instead of the blurred likelihood
    #[arg(long)]
    pub no_fuzzy: bool,
    /// Give every node unit confidence
    #[arg(long)]
    pub no_confidence: bool,
    /// Write memory snapshots here before adaptation and after every epoch
    #[arg(long)]
    pub snapshot_dir: Option<PathBuf>,
}

/// Fully resolved settings.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub pipeline: PipelineConfig,
    pub seed: u64,
}

impl Settings {
    pub fn resolve(file: &FileConfig, flags: &Knobs) -> Result<Self> {
        let pick = |flag: Option<usize>, key: Option<usize>| flag.or(key);
        let mut p = PipelineConfig::default();
        let mut hyper = HyperParams::default();
        let seed = flags.seed.or(file.seed).unwrap_or(0);

        if let Some(v) = pick(flags.hub, file.hub) {
            p.hub_count = v;
        }
        if let Some(v) = pick(flags.bridging, file.bridging) {
            p.bridging_count = v;
        }
        if let Some(v) = pick(flags.in_degree, file.in_degree) {
            p.bridging_in_degree = v;
        }
        if let Some(v) = pick(flags.rounds, file.rounds) {
            hyper.rounds = v;
        }
        if let Some(v) = pick(flags.batch_size, file.batch_size) {
            hyper.batch_size = v;
        }
        if let Some(v) = flags.beta.or(file.beta) {
            hyper.beta = v;
        }
        if let Some(v) = flags.sigma1.or(file.sigma1) {
            hyper.sigma1 = v;
        }
        hyper.fuzzy_enabled = !flags.no_fuzzy && file.fuzzy.unwrap_or(true);
        hyper.confidence_enabled = !flags.no_confidence && file.confidence.unwrap_or(true);
        hyper.validate()?;

        p.topology_seed = seed;
        p.train_seed = seed;
        p.hyper = hyper;
        p.adapt = AdaptationConfig {
            epochs: pick(flags.epochs, file.epochs).unwrap_or(AdaptationConfig::default().epochs),
            batch_size: hyper.batch_size,
            beta: hyper.beta,
            shuffle_seed: seed,
            refresh_per_epoch: true,
            snapshot_dir: flags.snapshot_dir.clone().or_else(|| file.snapshot_dir.clone()),
        };
        p.adapt.validate()?;
        Ok(Settings { pipeline: p, seed })
    }

    /// Applies retrieval knobs that were explicitly set to a loaded model's
    /// hyperparameters. Topology knobs are fixed once a model exists.
    pub fn override_retrieval(&self, file: &FileConfig, flags: &Knobs, hyper: &mut HyperParams) -> Result<()> {
        if flags.sigma1.or(file.sigma1).is_some() {
            hyper.sigma1 = self.pipeline.hyper.sigma1;
        }
        if flags.no_fuzzy || file.fuzzy.is_some() {
            hyper.fuzzy_enabled = self.pipeline.hyper.fuzzy_enabled;
        }
        if flags.no_confidence || file.confidence.is_some() {
            hyper.confidence_enabled = self.pipeline.hyper.confidence_enabled;
        }
        if flags.batch_size.or(file.batch_size).is_some() {
            hyper.batch_size = self.pipeline.hyper.batch_size;
        }
        if flags.beta.or(file.beta).is_some() {
            hyper.beta = self.pipeline.hyper.beta;
        }
        hyper.validate()
    }
}
