//! One JSON document that pins every stage of the pipeline.
//!
//! A [`PipelineConfig`] names the corpus location, the movie-similarity
//! source, and every stage's hyperparameters, so a whole run is a pure
//! function of (config file, seed). Two presets ship: `paper` carries the
//! published full-scale values, `desk` is sized to finish on a laptop in
//! minutes. Any field can then be overridden in the file or by CLI flags.
//!
//! The schema is exactly the serde shape of this struct; unknown fields are
//! rejected so typos fail loudly instead of silently using a default.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{SynthConfig, TASK_BOUNDARY, TASK_SIGNATURE_OVERLAP, TASK_TAGS, TASK_THEME};
use crate::encoder::EncoderConfig;
use crate::eval::probe::{ProbeConfig, ProbeObjective};
use crate::miner::MiningConfig;
use crate::moco::MoCoConfig;
use crate::movie_sim::MovieSimConfig;
use crate::similarity::SimilaritySource;

/// Failure to read, write, or validate a pipeline configuration.
#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("could not access config file {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config file {path} is not valid JSON for the schema: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("unknown preset {name:?}; expected \"paper\" or \"desk\"")]
    UnknownPreset { name: String },
    #[error("config field {field} is invalid: {reason}")]
    Invalid { field: &'static str, reason: String },
}

/// Named bundle of defaults.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// Published full-scale hyperparameters.
    Paper,
    /// Laptop-scale values used by the end-to-end acceptance run.
    Desk,
}

impl std::str::FromStr for Preset {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "paper" => Ok(Preset::Paper),
            "desk" => Ok(Preset::Desk),
            other => Err(ConfigError::UnknownPreset { name: other.to_owned() }),
        }
    }
}

impl std::fmt::Display for Preset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Preset::Paper => "paper",
            Preset::Desk => "desk",
        })
    }
}

/// Everything a pipeline run needs, serializable as one JSON object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Directory holding `manifest.json` and the `.m2se` embedding files.
    pub corpus_dir: PathBuf,
    /// Which movie metadata defines similarity.
    pub source: SimilaritySource,
    /// Positive partners per movie.
    pub k_per_movie: usize,
    /// Negatives sampled per positive.
    pub negative_ratio: f64,
    /// Synthetic corpus generator settings.
    pub synth: SynthConfig,
    /// Pair-classifier training settings.
    pub movie_sim: MovieSimConfig,
    /// Scene-pair mining settings.
    pub mining: MiningConfig,
    /// Scene encoder architecture.
    pub encoder: EncoderConfig,
    /// Contrastive training settings.
    pub moco: MoCoConfig,
    /// Probe settings keyed by task id.
    pub probes: BTreeMap<String, ProbeConfig>,
    /// `k` values evaluated by scene retrieval.
    pub retrieval_ks: Vec<usize>,
    /// Master seed; every stage derives its randomness from it.
    pub seed: u64,
}

fn probe(hidden: &[usize], lr: f64, batch: usize, epochs: usize, dropout: f64, objective: ProbeObjective) -> ProbeConfig {
    ProbeConfig { hidden_dims: hidden.to_vec(), lr, batch_size: batch, epochs, dropout, objective }
}

impl PipelineConfig {
    /// The published full-scale values: the stage defaults already carry
    /// them, and the probe grid follows the per-task table (theme uses the
    /// genre-classification column, signature overlap the like-ratio
    /// regression column).
    pub fn paper() -> Self {
        let mut probes = BTreeMap::new();
        probes.insert(
            TASK_THEME.to_owned(),
            probe(&[512, 512], 0.01, 128, 400, 0.25, ProbeObjective::SoftmaxCrossEntropy),
        );
        probes.insert(
            TASK_SIGNATURE_OVERLAP.to_owned(),
            probe(&[512, 512], 0.1, 16, 500, 0.5, ProbeObjective::SquaredError),
        );
        probes.insert(
            TASK_TAGS.to_owned(),
            probe(&[512, 512], 5.0, 512, 200, 0.25, ProbeObjective::BinaryCrossEntropy),
        );
        probes.insert(
            TASK_BOUNDARY.to_owned(),
            probe(&[512, 512], 0.03, 4096, 800, 0.8, ProbeObjective::BinaryCrossEntropy),
        );
        Self {
            corpus_dir: PathBuf::from("corpus"),
            source: SimilaritySource::MoreLikeThis,
            k_per_movie: 3,
            negative_ratio: 1.0,
            synth: SynthConfig::default(),
            movie_sim: MovieSimConfig::default(),
            mining: MiningConfig::default(),
            encoder: EncoderConfig::default(),
            moco: MoCoConfig::default(),
            probes,
            retrieval_ks: vec![1, 5, 10],
            seed: 0,
        }
    }

    /// Laptop-scale preset: 40 synthetic movies, a 128-shot pair classifier,
    /// a 256-slot queue, and probes sized to the few hundred scenes the desk
    /// corpus labels. These values back the end-to-end acceptance run.
    pub fn desk() -> Self {
        let mut cfg = Self::paper();
        cfg.synth.noise = 0.8;
        cfg.synth.motif_norm = 3.5;
        cfg.movie_sim = MovieSimConfig {
            pad_len: 128,
            hidden_dim: 128,
            k_avg: 8,
            s_avg: 4,
            k_max: 8,
            s_max: 4,
            dropout: 0.2,
            lr: 0.05,
            batch_size: 32,
            epochs: 30,
            seed: 0,
        };
        cfg.moco = MoCoConfig {
            queue_size: 256,
            momentum: 0.99,
            temperature: 0.07,
            lr: 1e-3,
            weight_decay: 1e-8,
            warmup_epochs: 2,
            batch_size: 16,
            epochs: 12,
            seed: 0,
        };
        cfg.probes.insert(
            TASK_THEME.to_owned(),
            probe(&[64], 0.1, 32, 60, 0.1, ProbeObjective::SoftmaxCrossEntropy),
        );
        cfg.probes.insert(
            TASK_SIGNATURE_OVERLAP.to_owned(),
            probe(&[64], 0.05, 32, 80, 0.0, ProbeObjective::SquaredError),
        );
        cfg.probes.insert(
            TASK_TAGS.to_owned(),
            probe(&[64], 0.2, 32, 60, 0.1, ProbeObjective::BinaryCrossEntropy),
        );
        cfg.probes.insert(
            TASK_BOUNDARY.to_owned(),
            probe(&[32], 0.2, 32, 80, 0.0, ProbeObjective::BinaryCrossEntropy),
        );
        cfg.retrieval_ks = vec![1, 5];
        cfg
    }

    /// The named preset's defaults.
    pub fn preset(preset: Preset) -> Self {
        match preset {
            Preset::Paper => Self::paper(),
            Preset::Desk => Self::desk(),
        }
    }

    /// Reads and validates a config file.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.to_owned(), source })?;
        let cfg: Self = serde_json::from_str(&text)
            .map_err(|source| ConfigError::Json { path: path.to_owned(), source })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Writes the config as pretty JSON (the documented schema is this
    /// serialization).
    pub fn save(&self, path: &Path) -> Result<(), ConfigError> {
        let mut text = serde_json::to_string_pretty(self)
            .map_err(|source| ConfigError::Json { path: path.to_owned(), source })?;
        text.push('\n');
        std::fs::write(path, text).map_err(|source| ConfigError::Io { path: path.to_owned(), source })
    }

    /// Sets the master seed and pushes it into every stage that keeps its
    /// own seed field.
    pub fn set_master_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.synth.seed = seed;
        self.movie_sim.seed = seed;
        self.moco.seed = seed;
    }

    /// Cross-field checks; per-stage configs are validated again by the
    /// stages themselves.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.k_per_movie == 0 {
            return Err(ConfigError::Invalid { field: "k_per_movie", reason: "must be at least 1".into() });
        }
        if !(self.negative_ratio.is_finite() && self.negative_ratio > 0.0) {
            return Err(ConfigError::Invalid {
                field: "negative_ratio",
                reason: format!("{} is not a positive finite ratio", self.negative_ratio),
            });
        }
        if self.retrieval_ks.is_empty() {
            return Err(ConfigError::Invalid { field: "retrieval_ks", reason: "no k values listed".into() });
        }
        if self.retrieval_ks.iter().any(|&k| k == 0) {
            return Err(ConfigError::Invalid { field: "retrieval_ks", reason: "k = 0 is not retrievable".into() });
        }
        if self.probes.is_empty() {
            return Err(ConfigError::Invalid { field: "probes", reason: "no probe tasks configured".into() });
        }
        Ok(())
    }
}
