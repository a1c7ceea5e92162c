//! Pre-trains on synthetic traffic, then fine-tunes at several label
//! fractions and reports test macro-F1.
//!
//! ```text
//! cargo run --release --example limited_label_sweep -- [pretrain_steps] [fractions]
//! ```
//!
//! `fractions` is comma separated, e.g. `0.05,0.2,1`.

use nethira::eval::{run_limited_label_sweep, split_dataset, ExperimentConfig};
use nethira::synthetic::SyntheticTraffic;
use nethira::training::pretrain;

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps: usize = args.next().map_or(Ok(300), |s| s.parse())?;
    let fractions: Vec<f64> = match args.next() {
        Some(s) => s.split(',').map(str::parse).collect::<Result<_, _>>()?,
        None => vec![0.05, 0.2, 1.0],
    };
    let mut cfg = ExperimentConfig::desk_scale();
    cfg.pretrain.steps = steps;
    let labeled = SyntheticTraffic::new(7).labeled_records(100, &cfg.preprocess);
    let corpus = SyntheticTraffic::new(7 ^ 0xC0FFEE).labeled_records(67, &cfg.preprocess);
    let init = pretrain(&cfg.pretrain, &corpus)?.checkpoint;
    let splits = split_dataset(&labeled, &cfg.split)?;
    println!("train {} / val {} / test {}", splits.train.len(), splits.val.len(), splits.test.len());
    for row in run_limited_label_sweep(Some(&init), &splits, &fractions, &cfg.finetune)? {
        println!("fraction {:>5}  {:>4} flows  macro-F1 {:.4}", row.fraction, row.train_flows, row.macro_f1);
    }
    Ok(())
}
