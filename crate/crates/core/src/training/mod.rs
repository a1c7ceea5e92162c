//! Pre-training and fine-tuning loops.
//!
//! Both loops are single-threaded and draw every random choice from seeds
//! derived from `(seed, step or epoch, sample index)`, so a config, a seed,
//! and a dataset fully determine the loss log.

mod finetune;
mod optim;
mod pretrain;

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corruption::{CorruptionConfig, CorruptionError, CorruptionKind};
use crate::model::{CheckpointError, ModelConfig, ModelError};

pub use crate::model::{load_checkpoint, save_checkpoint, ModelCheckpoint};
pub use finetune::{finetune, stratified_subsample, FinetuneBatch, FinetuneOutcome};
pub use optim::{clip_grad_norm, lr_at, Adam};
pub use pretrain::{pretrain, PretrainOutcome};

#[derive(Debug, Error)]
pub enum TrainingError {
    #[error("pre-training corpus is empty")]
    EmptyCorpus,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("non-finite loss at step {step}: byte {l_byte}, protocol {l_protocol}, packet {l_packet}")]
    NonFiniteLoss {
        step: usize,
        l_byte: f64,
        l_protocol: f64,
        l_packet: f64,
    },
    #[error("non-finite loss at epoch {epoch}, batch {batch}: sup {l_sup}, cons {l_cons}")]
    NonFiniteFinetuneLoss {
        epoch: usize,
        batch: usize,
        l_sup: f64,
        l_cons: f64,
    },
    #[error("validation failed: {0}")]
    Evaluation(String),
    #[error("mode {0:?} needs an initial checkpoint")]
    MissingInit(FinetuneMode),
    #[error("label {label:?} of record {index} outside [0, {n_classes})")]
    LabelMismatch {
        index: usize,
        label: Option<u32>,
        n_classes: usize,
    },
    #[error("records have shape {found:?}, expected {expected:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Corruption(#[from] CorruptionError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Defaults to 10% of `steps`.
    pub warmup_steps: Option<usize>,
    pub seed: u64,
    /// Objectives included in the loss; excluded terms are logged as 0.
    pub tasks: Vec<CorruptionKind>,
    pub corruption: CorruptionConfig,
    pub grad_clip: Option<f64>,
    /// Architecture; `max_len` is taken from the corpus.
    pub model: ModelConfig,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            steps: 100_000,
            lr: 1e-4,
            batch_size: 32,
            warmup_steps: None,
            seed: 0,
            tasks: vec![CorruptionKind::Byte, CorruptionKind::Protocol, CorruptionKind::Packet],
            corruption: CorruptionConfig::default(),
            grad_clip: Some(1.0),
            model: ModelConfig::default(),
        }
    }
}

impl PretrainConfig {
    pub fn warmup(&self) -> usize {
        self.warmup_steps.unwrap_or(self.steps / 10)
    }

    pub fn validate(&self) -> Result<(), TrainingError> {
        let bad = |m: &str| Err(TrainingError::InvalidConfig(m.to_string()));
        if self.steps == 0 {
            return bad("steps must be at least 1");
        }
        if !(self.lr > 0.0) {
            return bad("lr must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.tasks.is_empty() {
            return bad("at least one pre-training task is required");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FinetuneMode {
    /// Pre-trained init, supervised plus consistency loss.
    Full,
    /// Pre-trained init, supervised loss only; augmented views are skipped.
    SupOnly,
    /// Fresh parameters, supervised plus consistency loss.
    FromScratch,
    /// Like `Full`, from a checkpoint pre-trained on the byte task alone.
    ByteOnlyPretrain,
}

impl FinetuneMode {
    pub const ALL: [FinetuneMode; 4] = [
        FinetuneMode::Full,
        FinetuneMode::FromScratch,
        FinetuneMode::ByteOnlyPretrain,
        FinetuneMode::SupOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FinetuneMode::Full => "full",
            FinetuneMode::SupOnly => "sup-only",
            FinetuneMode::FromScratch => "from-scratch",
            FinetuneMode::ByteOnlyPretrain => "byte-only-pretrain",
        }
    }
}

impl std::str::FromStr for FinetuneMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown mode {s:?}; expected full, sup-only, from-scratch, byte-only-pretrain"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FinetuneConfig {
    pub epochs: usize,
    pub lr: f64,
    pub lambda: f64,
    pub label_fraction: f64,
    pub mode: FinetuneMode,
    pub seed: u64,
    pub batch_size: usize,
    pub stop_grad_raw: bool,
    pub grad_clip: Option<f64>,
    /// Fraction of all optimizer steps spent in linear warmup.
    pub warmup_ratio: f64,
    /// Augmentation knobs (`drop_prob`, `shuffle_within_layer`).
    pub corruption: CorruptionConfig,
    /// Architecture for `from-scratch`; `max_len` is taken from the data.
    pub model: ModelConfig,
    /// Derived from the largest label when absent.
    pub n_classes: Option<usize>,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            lr: 2e-5,
            lambda: 0.1,
            label_fraction: 1.0,
            mode: FinetuneMode::Full,
            seed: 0,
            batch_size: 32,
            stop_grad_raw: false,
            grad_clip: Some(1.0),
            warmup_ratio: 0.1,
            corruption: CorruptionConfig::default(),
            model: ModelConfig::default(),
            n_classes: None,
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<(), TrainingError> {
        let bad = |m: &str| Err(TrainingError::InvalidConfig(m.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if !(self.lr > 0.0) {
            return bad("lr must be positive");
        }
        if !(self.lambda >= 0.0) {
            return bad("lambda must be non-negative");
        }
        if !(self.label_fraction > 0.0 && self.label_fraction <= 1.0) {
            return bad("label_fraction must be in (0, 1]");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.warmup_ratio) {
            return bad("warmup_ratio must be in [0, 1]");
        }
        Ok(())
    }

    /// Consistency weight actually applied: 0 in `sup-only` mode.
    pub fn effective_lambda(&self) -> f64 {
        match self.mode {
            FinetuneMode::SupOnly => 0.0,
            _ => self.lambda,
        }
    }
}

/// Batch means of the three reconstruction terms at one optimizer step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PretrainLogRow {
    pub step: usize,
    pub l_byte: f64,
    pub l_protocol: f64,
    pub l_packet: f64,
}

impl PretrainLogRow {
    pub fn total(&self) -> f64 {
        self.l_byte + self.l_protocol + self.l_packet
    }
}

/// Epoch means of the supervised and consistency terms, and validation
/// macro-F1 after the epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FinetuneLogRow {
    pub epoch: usize,
    pub l_sup: f64,
    pub l_cons: f64,
    pub val_f1: f64,
}

fn write_csv(path: &Path, header: &str, rows: impl Iterator<Item = String>) -> Result<(), TrainingError> {
    let io = |source| TrainingError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut out = String::from(header);
    out.push('\n');
    for row in rows {
        out.push_str(&row);
        out.push('\n');
    }
    fs::File::create(path).and_then(|mut f| f.write_all(out.as_bytes())).map_err(io)
}

pub fn write_pretrain_log(path: impl AsRef<Path>, log: &[PretrainLogRow]) -> Result<(), TrainingError> {
    write_csv(
        path.as_ref(),
        "step,l_byte,l_protocol,l_packet",
        log.iter()
            .map(|r| format!("{},{},{},{}", r.step, r.l_byte, r.l_protocol, r.l_packet)),
    )
}

pub fn write_finetune_log(path: impl AsRef<Path>, log: &[FinetuneLogRow]) -> Result<(), TrainingError> {
    write_csv(
        path.as_ref(),
        "epoch,l_sup,l_cons,val_f1",
        log.iter()
            .map(|r| format!("{},{},{},{}", r.epoch, r.l_sup, r.l_cons, r.val_f1)),
    )
}
