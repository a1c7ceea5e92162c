use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::Command;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{evaluate, EvalError, SplitSpec, Splits};
use crate::ingest::{encode_line, FlowRecord, PreprocessConfig, TOOL_VERSION};
use crate::model::{ModelCheckpoint, ModelConfig};
use crate::training::{finetune, FinetuneConfig, FinetuneLogRow, FinetuneMode, PretrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub fractions: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            fractions: (1..=10).map(|i| i as f64 / 100.0).collect(),
        }
    }
}

/// Everything an experiment needs, loadable from TOML or JSON. Missing
/// sections and fields take their defaults.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub preprocess: PreprocessConfig,
    pub split: SplitSpec,
    pub pretrain: PretrainConfig,
    pub finetune: FinetuneConfig,
    pub sweep: SweepConfig,
}

impl ExperimentConfig {
    /// `.json` files parse as JSON, anything else as TOML.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, EvalError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| EvalError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        if is_json {
            serde_json::from_str(&text).map_err(|e| EvalError::Config(e.to_string()))
        } else {
            toml::from_str(&text).map_err(|e| EvalError::Config(e.to_string()))
        }
    }

    /// Settings for a single-core desk run on synthetic traffic: `M = 4`,
    /// `L = 64`, the tiny architecture, 2000 pre-training steps at batch 4,
    /// and higher learning rates than the full-scale defaults.
    pub fn desk_scale() -> Self {
        let preprocess = PreprocessConfig {
            m: 4,
            l: 64,
            ..Default::default()
        };
        let model = ModelConfig::tiny(preprocess.m * preprocess.l);
        Self {
            preprocess,
            split: SplitSpec::default(),
            pretrain: PretrainConfig {
                steps: 2000,
                lr: 1e-3,
                batch_size: 4,
                model: model.clone(),
                ..Default::default()
            },
            finetune: FinetuneConfig {
                lr: 1e-3,
                batch_size: 8,
                model,
                ..Default::default()
            },
            sweep: SweepConfig::default(),
        }
    }

    /// Sets every stage's seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.split.seed = seed;
        self.pretrain.seed = seed;
        self.finetune.seed = seed;
        self
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }
}

/// SHA-256 over the dataset-file lines of `records`.
pub fn records_hash(records: &[FlowRecord]) -> String {
    let mut h = Sha256::new();
    for r in records {
        h.update(encode_line(r).as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub fraction: f64,
    pub train_flows: usize,
    pub macro_f1: f64,
}

/// Fine-tunes once per label fraction (ascending, duplicates removed) on the
/// stratified subsample of `splits.train` and evaluates on `splits.test`.
pub fn run_limited_label_sweep(
    init: Option<&ModelCheckpoint<f32>>,
    splits: &Splits,
    fractions: &[f64],
    config: &FinetuneConfig,
) -> Result<Vec<SweepRow>, EvalError> {
    let mut fractions = fractions.to_vec();
    fractions.sort_by(f64::total_cmp);
    fractions.dedup();
    let mut rows = Vec::with_capacity(fractions.len());
    for fraction in fractions {
        let cfg = FinetuneConfig {
            label_fraction: fraction,
            ..config.clone()
        };
        let out = finetune(&cfg, init, &splits.train, &splits.val)?;
        let report = evaluate(&out.checkpoint, &splits.test)?;
        log::info!("fraction {fraction}: macro-F1 {:.4}", report.macro_avg.f1);
        rows.push(SweepRow {
            fraction,
            train_flows: out.train_indices.len(),
            macro_f1: report.macro_avg.f1,
        });
    }
    Ok(rows)
}

/// Pre-trained checkpoints for the ablation modes that need one.
#[derive(Debug, Clone, Copy, Default)]
pub struct AblationInits<'a> {
    /// Used by `full` and `sup-only`.
    pub full: Option<&'a ModelCheckpoint<f32>>,
    /// Used by `byte-only-pretrain`.
    pub byte_only: Option<&'a ModelCheckpoint<f32>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub mode: FinetuneMode,
    pub macro_f1: f64,
    pub test_split_hash: String,
    #[serde(skip)]
    pub log: Vec<FinetuneLogRow>,
}

/// Fine-tunes and evaluates each mode with the same seeds and splits.
pub fn run_ablation(
    splits: &Splits,
    modes: &[FinetuneMode],
    inits: AblationInits<'_>,
    config: &FinetuneConfig,
) -> Result<Vec<AblationRow>, EvalError> {
    let test_split_hash = records_hash(&splits.test);
    let mut rows = Vec::with_capacity(modes.len());
    for &mode in modes {
        let init = match mode {
            FinetuneMode::Full | FinetuneMode::SupOnly => inits.full,
            FinetuneMode::ByteOnlyPretrain => inits.byte_only,
            FinetuneMode::FromScratch => None,
        };
        let cfg = FinetuneConfig {
            mode,
            ..config.clone()
        };
        let out = finetune(&cfg, init, &splits.train, &splits.val)?;
        let report = evaluate(&out.checkpoint, &splits.test)?;
        log::info!("{}: macro-F1 {:.4}", mode.name(), report.macro_avg.f1);
        rows.push(AblationRow {
            mode,
            macro_f1: report.macro_avg.f1,
            test_split_hash: test_split_hash.clone(),
            log: out.log,
        });
    }
    Ok(rows)
}

fn write_text(path: &Path, text: &str) -> Result<(), EvalError> {
    fs::write(path, text).map_err(|source| EvalError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn write_sweep_csv(path: impl AsRef<Path>, rows: &[SweepRow]) -> Result<(), EvalError> {
    let mut out = String::from("fraction,train_flows,macro_f1\n");
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.fraction, r.train_flows, r.macro_f1));
    }
    write_text(path.as_ref(), &out)
}

pub fn write_ablation_csv(path: impl AsRef<Path>, rows: &[AblationRow]) -> Result<(), EvalError> {
    let mut out = String::from("mode,macro_f1,test_split_hash\n");
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.mode.name(), r.macro_f1, r.test_split_hash));
    }
    write_text(path.as_ref(), &out)
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<(), EvalError> {
    let text = serde_json::to_string_pretty(value).expect("value serializes");
    write_text(path.as_ref(), &(text + "\n"))
}

/// `git rev-parse HEAD` of the working directory, if available.
pub fn git_revision() -> Option<String> {
    let out = Command::new("git").args(["rev-parse", "HEAD"]).output().ok()?;
    out.status
        .success()
        .then(|| String::from_utf8_lossy(&out.stdout).trim().to_string())
        .filter(|s| !s.is_empty())
}

/// Provenance record written next to every experiment output.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub config_hash: String,
    pub git_revision: Option<String>,
    pub seed: u64,
    pub deterministic: bool,
    /// Dataset name to [`records_hash`].
    pub datasets: BTreeMap<String, String>,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, config: &ExperimentConfig, seed: u64, deterministic: bool) -> Self {
        Self {
            command: command.to_string(),
            tool_version: TOOL_VERSION.to_string(),
            config_hash: config.hash(),
            git_revision: git_revision(),
            seed,
            deterministic,
            datasets: BTreeMap::new(),
            outputs: Vec::new(),
        }
    }

    pub fn dataset(&mut self, name: &str, records: &[FlowRecord]) -> &mut Self {
        self.datasets.insert(name.to_string(), records_hash(records));
        self
    }

    pub fn output(&mut self, path: impl AsRef<Path>) -> &mut Self {
        self.outputs.push(path.as_ref().display().to_string());
        self
    }
}
