//! Runs the four fine-tuning modes on one split of synthetic traffic.
//!
//! ```text
//! cargo run --release --example ablation_study -- [pretrain_steps] [epochs]
//! ```

use nethira::corruption::CorruptionKind;
use nethira::eval::{run_ablation, split_dataset, AblationInits, ExperimentConfig};
use nethira::synthetic::SyntheticTraffic;
use nethira::training::{pretrain, FinetuneMode, PretrainConfig};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps: usize = args.next().map_or(Ok(300), |s| s.parse())?;
    let epochs: usize = args.next().map_or(Ok(5), |s| s.parse())?;
    let mut cfg = ExperimentConfig::desk_scale();
    cfg.pretrain.steps = steps;
    cfg.finetune.epochs = epochs;
    let labeled = SyntheticTraffic::new(7).labeled_records(100, &cfg.preprocess);
    let corpus = SyntheticTraffic::new(7 ^ 0xC0FFEE).labeled_records(67, &cfg.preprocess);
    let full = pretrain(&cfg.pretrain, &corpus)?.checkpoint;
    let byte_cfg = PretrainConfig {
        tasks: vec![CorruptionKind::Byte],
        ..cfg.pretrain.clone()
    };
    let byte_only = pretrain(&byte_cfg, &corpus)?.checkpoint;
    let splits = split_dataset(&labeled, &cfg.split)?;
    let inits = AblationInits {
        full: Some(&full),
        byte_only: Some(&byte_only),
    };
    let rows = run_ablation(&splits, &FinetuneMode::ALL, inits, &cfg.finetune)?;
    println!("test split {}", &rows[0].test_split_hash[..16]);
    for row in &rows {
        let last = row.log.last().expect("at least one epoch");
        println!(
            "{:<20} macro-F1 {:.4}  final l_sup {:.4}  l_cons {:.4}",
            row.mode.name(),
            row.macro_f1,
            last.l_sup,
            last.l_cons
        );
    }
    Ok(())
}
