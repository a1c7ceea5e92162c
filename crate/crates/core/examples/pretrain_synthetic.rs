//! Pre-trains the tiny model on synthetic traffic and prints the loss curve.
//!
//! ```text
//! cargo run --release --example pretrain_synthetic -- [steps]
//! ```

use std::time::Instant;

use nethira::ingest::PreprocessConfig;
use nethira::model::ModelConfig;
use nethira::synthetic::SyntheticTraffic;
use nethira::training::{pretrain, PretrainConfig};

fn main() -> anyhow::Result<()> {
    let steps: usize = std::env::args().nth(1).map_or(Ok(300), |s| s.parse())?;
    let prep = PreprocessConfig {
        m: 4,
        l: 64,
        ..Default::default()
    };
    let corpus = SyntheticTraffic::new(7).labeled_records(67, &prep);
    let config = PretrainConfig {
        steps,
        lr: 1e-3,
        batch_size: 4,
        model: ModelConfig::tiny(prep.m * prep.l),
        ..Default::default()
    };
    let start = Instant::now();
    let out = pretrain(&config, &corpus)?;
    for row in out.log.iter().filter(|r| r.step == 1 || r.step % 50 == 0) {
        println!(
            "step {:5}  byte {:8.3}  protocol {:8.3}  packet {:8.3}  total {:8.3}",
            row.step,
            row.l_byte,
            row.l_protocol,
            row.l_packet,
            row.total()
        );
    }
    let head: f64 = out.log.iter().take(10).map(|r| r.total()).sum::<f64>() / 10.0;
    let last = out.log.last().expect("at least one step").total();
    println!(
        "{} flows, {} steps in {:.1?}; final/initial = {:.3}",
        corpus.len(),
        steps,
        start.elapsed(),
        last / head
    );
    Ok(())
}
