//! Run configuration, the run manifest and checkpoint directories.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use vgan_core::generator::Generator;
use vgan_core::training::{TrainConfig, TrainSummary, Trainer};
use vgan_core::ParamStore;

use crate::bytes::write_atomic;
use crate::checkpoint::{load_params, save_params, save_state};

/// Where training samples come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// A dataset manifest; with `split_ratio`, only the training part of a
    /// stratified split is used and the rest is scored after training.
    Manifest { path: PathBuf, split_ratio: Option<f64> },
    /// Phantoms generated in memory.
    Phantoms {
        count: usize,
        seed: u64,
        extents: [usize; 3],
        /// `[hgg, lgg]` weights.
        grade_ratio: [u32; 2],
    },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Phantoms {
            count: 10,
            seed: 0,
            extents: [32, 32, 32],
            grade_ratio: [4, 1],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub training: TrainConfig,
    pub data: DataSource,
    /// Checkpoint every this many epochs; the final state is always saved.
    pub checkpoint_every: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            training: TrainConfig::default(),
            data: DataSource::default(),
            checkpoint_every: 1,
        }
    }
}

impl RunConfig {
    /// The desk preset trained on one high-grade phantom the size of a patch.
    pub fn desk() -> Self {
        let training = TrainConfig::desk();
        Self {
            data: DataSource::Phantoms {
                count: 1,
                seed: training.seed,
                extents: training.generator.patch,
                grade_ratio: [1, 0],
            },
            training,
            checkpoint_every: 100,
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "desk" => Some(Self::desk()),
            "default" => Some(Self::default()),
            _ => None,
        }
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.training.validate()?;
        anyhow::ensure!(self.checkpoint_every > 0, "checkpoint_every must be positive");
        match &self.data {
            DataSource::Manifest { split_ratio: Some(r), .. } => {
                anyhow::ensure!(*r > 0.0 && *r < 1.0, "split_ratio {r} outside (0, 1)")
            }
            DataSource::Phantoms { count, grade_ratio, .. } => {
                anyhow::ensure!(*count > 0, "phantom count must be positive");
                anyhow::ensure!(grade_ratio.iter().any(|&w| w > 0), "grade_ratio has no weight");
            }
            _ => {}
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }
}

/// Everything needed to replay a run. Written when the run starts and
/// rewritten when it ends.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub config: RunConfig,
    pub seed: u64,
    /// `config`, `VGAN_SEED` or `flag`.
    pub seed_source: String,
    pub started: Option<String>,
    pub finished: Option<String>,
    pub status: RunStatus,
    pub metric_log: PathBuf,
    pub checkpoints: Vec<PathBuf>,
    pub summary: Option<RunSummary>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Completed,
    Failed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSummary {
    pub steps: u64,
    pub epochs: usize,
    pub skipped_steps: usize,
}

impl From<&TrainSummary> for RunSummary {
    fn from(s: &TrainSummary) -> Self {
        Self {
            steps: s.steps,
            epochs: s.epochs,
            skipped_steps: s.skipped_steps,
        }
    }
}

impl RunManifest {
    pub fn save(&self, path: &Path) -> anyhow::Result<()> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        write_atomic(path, s.as_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

pub const GENERATOR_FILE: &str = "generator.vgan";
pub const CRITIC_FILE: &str = "critic.vgan";
pub const GENERATOR_STATE_FILE: &str = "generator.vgst";
pub const CRITIC_STATE_FILE: &str = "critic.vgst";
pub const CONFIG_FILE: &str = "config.json";

/// Both networks, both optimizer states and the training configuration.
pub fn save_checkpoint(dir: &Path, trainer: &Trainer<f32>) -> anyhow::Result<()> {
    save_params(&dir.join(GENERATOR_FILE), &trainer.g_params)?;
    save_params(&dir.join(CRITIC_FILE), &trainer.d_params)?;
    save_state(&dir.join(GENERATOR_STATE_FILE), &trainer.g_opt, &trainer.g_params)?;
    save_state(&dir.join(CRITIC_STATE_FILE), &trainer.d_opt, &trainer.d_params)?;
    let mut cfg = serde_json::to_string_pretty(trainer.config())?;
    cfg.push('\n');
    write_atomic(&dir.join(CONFIG_FILE), cfg.as_bytes())?;
    Ok(())
}

/// A generator restored from a checkpoint directory.
pub struct LoadedGenerator {
    pub config: TrainConfig,
    pub generator: Generator,
    pub params: ParamStore<f32>,
}

pub fn load_generator(dir: &Path) -> anyhow::Result<LoadedGenerator> {
    let cfg_path = dir.join(CONFIG_FILE);
    let text = fs::read_to_string(&cfg_path).with_context(|| format!("reading {}", cfg_path.display()))?;
    let config: TrainConfig =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", cfg_path.display()))?;
    let mut params = ParamStore::new();
    let generator = Generator::new(config.generator.clone(), &mut params, &mut ChaCha8Rng::seed_from_u64(config.seed))?;
    let weights = dir.join(GENERATOR_FILE);
    load_params(&weights, &mut params).with_context(|| format!("loading {}", weights.display()))?;
    Ok(LoadedGenerator {
        config,
        generator,
        params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn configs_round_trip_through_json() {
        for cfg in [RunConfig::default(), RunConfig::desk()] {
            let back: RunConfig = serde_json::from_str(&cfg.to_json()).unwrap();
            assert_eq!(back, cfg);
        }
    }

    #[test]
    fn partial_config_takes_defaults() {
        let cfg: RunConfig = serde_json::from_str(r#"{"checkpoint_every": 3}"#).unwrap();
        assert_eq!(cfg.training, TrainConfig::default());
        assert_eq!(cfg.checkpoint_every, 3);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"trainin": {}}"#).is_err());
    }
}
