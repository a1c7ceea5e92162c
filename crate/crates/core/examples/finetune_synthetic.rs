//! Pre-trains, fine-tunes, and evaluates on synthetic three-class traffic.
//!
//! ```text
//! cargo run --release --example finetune_synthetic -- [pretrain_steps] [seed]
//! ```

use std::time::Instant;

use nethira::eval::{evaluate, split_dataset, ExperimentConfig};
use nethira::synthetic::SyntheticTraffic;
use nethira::training::{finetune, pretrain};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps: usize = args.next().map_or(Ok(2000), |s| s.parse())?;
    let seed: u64 = args.next().map_or(Ok(0), |s| s.parse())?;
    let mut config = ExperimentConfig::desk_scale().with_seed(seed);
    config.pretrain.steps = steps;

    let traffic = SyntheticTraffic::new(seed);
    let labeled = traffic.labeled_records(100, &config.preprocess);
    let splits = split_dataset(&labeled, &config.split)?;
    let corpus = SyntheticTraffic::new(seed ^ 0xC0FFEE).labeled_records(67, &config.preprocess);

    let t = Instant::now();
    let pre = pretrain(&config.pretrain, &corpus)?;
    let head: f64 = pre.log.iter().take(10).map(|r| r.total()).sum::<f64>() / 10.0;
    println!(
        "pre-training: {} steps in {:.1?}, L_P {:.2} -> {:.2}",
        steps,
        t.elapsed(),
        head,
        pre.log.last().map_or(0.0, |r| r.total())
    );

    let t = Instant::now();
    let out = finetune(&config.finetune, Some(&pre.checkpoint), &splits.train, &splits.val)?;
    for row in &out.log {
        println!(
            "epoch {:2}  l_sup {:.4}  l_cons {:.4}  val_f1 {:.4}",
            row.epoch, row.l_sup, row.l_cons, row.val_f1
        );
    }
    let report = evaluate(&out.checkpoint, &splits.test)?;
    println!(
        "fine-tuning: {:.1?}, best epoch {}, test macro-F1 {:.4}, confusion {:?}",
        t.elapsed(),
        out.best_epoch,
        report.macro_avg.f1,
        report.confusion
    );
    Ok(())
}
