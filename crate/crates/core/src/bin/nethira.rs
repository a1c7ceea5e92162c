use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use nethira::corruption::CorruptionKind;
use nethira::eval::{
    evaluate, run_ablation, run_limited_label_sweep, split_dataset, write_ablation_csv, write_json, write_sweep_csv,
    AblationInits, ExperimentConfig, RunManifest,
};
use nethira::ingest::{preprocess_dir, read_dataset, write_dataset, Dataset};
use nethira::training::{
    finetune, load_checkpoint, pretrain, save_checkpoint, write_finetune_log, write_pretrain_log, FinetuneMode,
};

/// Byte-level traffic classification: preprocessing, pre-training,
/// fine-tuning, and evaluation.
#[derive(Parser)]
#[command(name = "nethira", version)]
struct Cli {
    /// Experiment config (TOML, or JSON with a .json extension).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for splitting, pre-training, and fine-tuning.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Require bit-reproducible runs. Every run is single-threaded with
    /// derived seeds, so this is always satisfied; it is recorded in the
    /// run manifest.
    #[arg(long, global = true)]
    deterministic: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Turn a directory of PCAP files into a dataset file.
    Preprocess(PreprocessArgs),
    /// Pre-train on an unlabeled dataset.
    Pretrain(PretrainArgs),
    /// Fine-tune a classifier on labeled datasets.
    Finetune(FinetuneArgs),
    /// Score a fine-tuned checkpoint on a labeled dataset.
    Eval(EvalArgs),
    /// Fine-tune at several label fractions and report test macro-F1.
    Sweep(SweepArgs),
    /// Compare fine-tuning modes on one split.
    Ablate(AblateArgs),
    /// Print the header field layout of one packet of a dataset.
    Fields(FieldsArgs),
}

#[derive(Args)]
struct PreprocessArgs {
    /// Directory searched recursively for *.pcap files.
    #[arg(long)]
    input: PathBuf,
    /// Dataset file to write; the manifest goes next to it.
    #[arg(long)]
    out: PathBuf,
    /// Packets per flow (overrides the config).
    #[arg(long)]
    m: Option<usize>,
    /// Bytes per packet (overrides the config).
    #[arg(long)]
    l: Option<usize>,
    /// Key flows by the directional five-tuple.
    #[arg(long)]
    unidirectional: bool,
    /// Label each file by its parent directory name.
    #[arg(long)]
    label_from_dirname: bool,
    /// Also write train/val/test datasets split per the config into this directory.
    #[arg(long)]
    split_dir: Option<PathBuf>,
}

#[derive(Args)]
struct PretrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated subset of byte,protocol,packet.
    #[arg(long, value_delimiter = ',')]
    tasks: Option<Vec<String>>,
    #[arg(long)]
    steps: Option<usize>,
    /// Loss log CSV; defaults to <out>.log.csv.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct FinetuneArgs {
    /// Pre-trained checkpoint; optional for from-scratch.
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    val: PathBuf,
    #[arg(long)]
    mode: Option<FinetuneMode>,
    #[arg(long)]
    label_fraction: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    /// Loss log CSV; defaults to <out>.log.csv.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    test: PathBuf,
    /// Metrics JSON; printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    init: PathBuf,
    /// Labeled dataset, split per the config.
    #[arg(long)]
    dataset: PathBuf,
    /// Comma-separated label fractions; defaults to the config's list.
    #[arg(long, value_delimiter = ',')]
    fractions: Option<Vec<f64>>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AblateArgs {
    /// Labeled dataset, split per the config.
    #[arg(long)]
    dataset: PathBuf,
    /// Checkpoint pre-trained with all three tasks (full, sup-only).
    #[arg(long)]
    full_init: Option<PathBuf>,
    /// Checkpoint pre-trained with the byte task only (byte-only-pretrain).
    #[arg(long)]
    byte_init: Option<PathBuf>,
    /// Comma-separated modes; defaults to all four.
    #[arg(long, value_delimiter = ',')]
    modes: Option<Vec<FinetuneMode>>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FieldsArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Zero-based flow index.
    #[arg(long, default_value_t = 0)]
    flow: usize,
    /// Zero-based packet index within the flow.
    #[arg(long, default_value_t = 0)]
    packet: usize,
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(suffix);
    path.with_file_name(name)
}

fn load(path: &Path) -> Result<Dataset> {
    read_dataset(path).with_context(|| format!("reading dataset {}", path.display()))
}

fn parse_task(name: &str) -> Result<CorruptionKind> {
    Ok(match name.trim() {
        "byte" => CorruptionKind::Byte,
        "protocol" => CorruptionKind::Protocol,
        "packet" => CorruptionKind::Packet,
        other => bail!("unknown task {other:?}; expected byte, protocol, or packet"),
    })
}

fn n_classes(cfg: &mut ExperimentConfig, ds: &Dataset) {
    if cfg.finetune.n_classes.is_none() && !ds.manifest.classes.is_empty() {
        cfg.finetune.n_classes = Some(ds.manifest.classes.len());
    }
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg = cfg.with_seed(seed);
    }
    let seed = cli.seed.unwrap_or(cfg.pretrain.seed);
    let manifest = |name: &str, cfg: &ExperimentConfig| RunManifest::new(name, cfg, seed, cli.deterministic);

    match cli.command {
        Command::Preprocess(a) => {
            let mut p = cfg.preprocess;
            p.m = a.m.unwrap_or(p.m);
            p.l = a.l.unwrap_or(p.l);
            p.bidirectional &= !a.unidirectional;
            p.label_from_dirname |= a.label_from_dirname;
            let ds = preprocess_dir(&a.input, &p)?;
            write_dataset(&a.out, &ds)?;
            let m = &ds.manifest;
            println!(
                "{} flows, {} skipped packets, ANPF {:.3}, classes {:?}",
                m.flows, m.skipped_packets, m.anpf, m.classes
            );
            if let Some(dir) = a.split_dir {
                std::fs::create_dir_all(&dir)?;
                let splits = split_dataset(&ds.records, &cfg.split)?;
                for (name, records) in [("train", splits.train), ("val", splits.val), ("test", splits.test)] {
                    let manifest = nethira::ingest::DatasetManifest {
                        flows: records.len(),
                        ..ds.manifest.clone()
                    };
                    write_dataset(dir.join(format!("{name}.jsonl")), &Dataset { manifest, records })?;
                }
            }
        }
        Command::Pretrain(a) => {
            let ds = load(&a.corpus)?;
            if let Some(tasks) = &a.tasks {
                cfg.pretrain.tasks = tasks.iter().map(|t| parse_task(t)).collect::<Result<_>>()?;
            }
            cfg.pretrain.steps = a.steps.unwrap_or(cfg.pretrain.steps);
            let out = pretrain(&cfg.pretrain, &ds.records)?;
            save_checkpoint(&out.checkpoint, &a.out)?;
            let log_path = a.log.unwrap_or_else(|| with_suffix(&a.out, ".log.csv"));
            write_pretrain_log(&log_path, &out.log)?;
            let mut run = manifest("pretrain", &cfg);
            run.dataset("corpus", &ds.records).output(&a.out).output(&log_path);
            write_json(with_suffix(&a.out, ".run.json"), &run)?;
        }
        Command::Finetune(a) => {
            let (train, val) = (load(&a.train)?, load(&a.val)?);
            n_classes(&mut cfg, &train);
            let f = &mut cfg.finetune;
            f.mode = a.mode.unwrap_or(f.mode);
            f.label_fraction = a.label_fraction.unwrap_or(f.label_fraction);
            f.epochs = a.epochs.unwrap_or(f.epochs);
            let init = a.init.as_deref().map(load_checkpoint::<f32>).transpose()?;
            let out = finetune(&cfg.finetune, init.as_ref(), &train.records, &val.records)?;
            save_checkpoint(&out.checkpoint, &a.out)?;
            let log_path = a.log.unwrap_or_else(|| with_suffix(&a.out, ".log.csv"));
            write_finetune_log(&log_path, &out.log)?;
            println!("best epoch {}", out.best_epoch);
            let mut run = manifest("finetune", &cfg);
            run.dataset("train", &train.records)
                .dataset("val", &val.records)
                .output(&a.out)
                .output(&log_path);
            write_json(with_suffix(&a.out, ".run.json"), &run)?;
        }
        Command::Eval(a) => {
            let ckpt = load_checkpoint::<f32>(&a.ckpt)?;
            let test = load(&a.test)?;
            let report = evaluate(&ckpt, &test.records)?;
            match &a.out {
                Some(path) => {
                    write_json(path, &report)?;
                    let mut run = manifest("eval", &cfg);
                    run.dataset("test", &test.records).output(path);
                    write_json(with_suffix(path, ".run.json"), &run)?;
                    println!("macro-F1 {:.4}", report.macro_avg.f1);
                }
                None => println!("{}", serde_json::to_string_pretty(&report)?),
            }
        }
        Command::Sweep(a) => {
            let ds = load(&a.dataset)?;
            n_classes(&mut cfg, &ds);
            let init = load_checkpoint::<f32>(&a.init)?;
            let splits = split_dataset(&ds.records, &cfg.split)?;
            let fractions = a.fractions.unwrap_or_else(|| cfg.sweep.fractions.clone());
            let rows = run_limited_label_sweep(Some(&init), &splits, &fractions, &cfg.finetune)?;
            write_sweep_csv(&a.out, &rows)?;
            for r in &rows {
                println!("{:>6}  {:.4}", r.fraction, r.macro_f1);
            }
            let mut run = manifest("sweep", &cfg);
            run.dataset("train", &splits.train)
                .dataset("val", &splits.val)
                .dataset("test", &splits.test)
                .output(&a.out);
            write_json(with_suffix(&a.out, ".run.json"), &run)?;
        }
        Command::Ablate(a) => {
            let ds = load(&a.dataset)?;
            n_classes(&mut cfg, &ds);
            let full = a.full_init.as_deref().map(load_checkpoint::<f32>).transpose()?;
            let byte = a.byte_init.as_deref().map(load_checkpoint::<f32>).transpose()?;
            let splits = split_dataset(&ds.records, &cfg.split)?;
            let modes = a.modes.unwrap_or_else(|| FinetuneMode::ALL.to_vec());
            let inits = AblationInits {
                full: full.as_ref(),
                byte_only: byte.as_ref(),
            };
            let rows = run_ablation(&splits, &modes, inits, &cfg.finetune)?;
            write_ablation_csv(&a.out, &rows)?;
            for r in &rows {
                println!("{:<20} {:.4}", r.mode.name(), r.macro_f1);
            }
            let mut run = manifest("ablate", &cfg);
            run.dataset("train", &splits.train)
                .dataset("val", &splits.val)
                .dataset("test", &splits.test)
                .output(&a.out);
            write_json(with_suffix(&a.out, ".run.json"), &run)?;
        }
        Command::Fields(a) => {
            let ds = load(&a.dataset)?;
            let Some(record) = ds.records.get(a.flow) else {
                bail!("flow {} out of range (dataset has {})", a.flow, ds.records.len());
            };
            let Some(packet) = record.packets.get(a.packet) else {
                bail!("packet {} out of range (flow has {})", a.packet, record.m());
            };
            let map = nethira::protocol_map::parse_packet_fields(&packet.bytes, a.packet);
            print!("{}", map.to_table());
        }
    }
    Ok(())
}
