//! Layout of a training run directory and the observer that fills it.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{SystemTime, UNIX_EPOCH};

use gametalk::dialogue::{write_jsonl, Episode};
use gametalk::game::GameKind;
use gametalk::training::{
    save_checkpoint, CheckpointMeta, MetricsRow, Optimizer, RngState, TrainError, TrainObserver,
};
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::CliError;

pub const MANIFEST: &str = "manifest.json";
pub const CHECKPOINT: &str = "checkpoint.bin";
pub const CHECKPOINT_META: &str = "checkpoint.json";
pub const METRICS: &str = "metrics.csv";
pub const EPISODES: &str = "episodes.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub checkpoint: String,
    pub checkpoint_meta: String,
    pub metrics: String,
    pub episodes: String,
}

impl Default for Layout {
    fn default() -> Self {
        Self {
            checkpoint: CHECKPOINT.into(),
            checkpoint_meta: CHECKPOINT_META.into(),
            metrics: METRICS.into(),
            episodes: EPISODES.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: Config,
    pub config_hash: String,
    pub git_describe: Option<String>,
    pub seed: u64,
    pub started_unix: u64,
    pub finished_unix: Option<u64>,
    pub layout: Layout,
}

impl Manifest {
    pub fn new(config: &Config) -> Self {
        Self {
            config: config.clone(),
            config_hash: config.hash(),
            git_describe: git_describe(),
            seed: config.training.seed,
            started_unix: now_unix(),
            finished_unix: None,
            layout: Layout::default(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        let json = serde_json::to_string_pretty(self).map_err(|e| CliError::Runtime(e.to_string()))?;
        fs::write(dir.join(MANIFEST), json + "\n")?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self, CliError> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }
}

pub fn now_unix() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn git_describe() -> Option<String> {
    let out = Command::new("git").args(["describe", "--always", "--dirty", "--tags"]).output().ok()?;
    out.status.success().then(|| String::from_utf8_lossy(&out.stdout).trim().to_string())
}

/// Writes metrics, sampled episodes and checkpoints into a run directory.
pub struct RunWriter {
    dir: PathBuf,
    metrics: csv::Writer<File>,
    episodes: BufWriter<File>,
    log_every: usize,
    config_hash: String,
    seed: u64,
    game: GameKind,
    logit_scale: f64,
}

impl RunWriter {
    /// Opens the run files. With `append` the existing metrics and episode
    /// logs are extended instead of replaced.
    pub fn create(dir: &Path, config: &Config, append: bool) -> Result<Self, CliError> {
        let metrics_path = dir.join(METRICS);
        let write_header = !append || !metrics_path.exists();
        let open = |p: PathBuf| OpenOptions::new().create(true).write(true).append(append).truncate(!append).open(p);
        let metrics = csv::WriterBuilder::new().has_headers(write_header).from_writer(open(metrics_path)?);
        Ok(Self {
            dir: dir.to_path_buf(),
            metrics,
            episodes: BufWriter::new(open(dir.join(EPISODES))?),
            log_every: config.output.log_episodes_every,
            config_hash: config.hash(),
            seed: config.training.seed,
            game: config.game.kind,
            logit_scale: config.agents.logit_scale,
        })
    }

    pub fn finish(mut self) -> Result<(), CliError> {
        self.metrics.flush()?;
        self.episodes.flush()?;
        Ok(())
    }
}

impl TrainObserver for RunWriter {
    fn metrics(&mut self, row: &MetricsRow) -> Result<(), TrainError> {
        self.metrics.serialize(row).map_err(|e| TrainError::Checkpoint(e.to_string()))?;
        self.metrics.flush()?;
        Ok(())
    }

    fn episodes(&mut self, step: usize, episodes: &[Episode]) -> Result<(), TrainError> {
        if self.log_every > 0 && step % self.log_every == 0 {
            write_jsonl(&mut self.episodes, episodes)?;
        }
        Ok(())
    }

    fn checkpoint(&mut self, step: usize, theta: &[f64], optimizer: &Optimizer) -> Result<(), TrainError> {
        let meta = CheckpointMeta {
            step,
            config_hash: self.config_hash.clone(),
            rng: RngState { seed: self.seed, next_step: step },
            adam: optimizer.adam.clone(),
            game: self.game,
            dim: theta.len(),
            logit_scale: self.logit_scale,
        };
        save_checkpoint(&self.dir.join(CHECKPOINT), theta, &meta)?;
        self.episodes.flush()?;
        Ok(())
    }
}
