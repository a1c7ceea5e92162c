//! Preprocesses a directory of captures and prints the first flow.
//!
//! ```text
//! cargo run --release --example preprocess_pcap -- <dir> [out.jsonl]
//! ```
//!
//! Without arguments, a small synthetic capture is written to a temporary
//! directory first.

use std::path::PathBuf;

use nethira::ingest::{flatten, preprocess_dir, write_dataset, write_pcap, PreprocessConfig};
use nethira::synthetic::SyntheticTraffic;

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let tmp = std::env::temp_dir().join("nethira-preprocess-example");
    let dir = match args.next() {
        Some(d) => PathBuf::from(d),
        None => {
            let traffic = SyntheticTraffic::new(1);
            for label in 0..3 {
                let class_dir = tmp.join(SyntheticTraffic::CLASS_NAMES[label as usize]);
                std::fs::create_dir_all(&class_dir)?;
                let packets: Vec<_> = (0..5).flat_map(|i| traffic.flow(label, i).packets).collect();
                write_pcap(class_dir.join("c.pcap"), &packets)?;
            }
            tmp.clone()
        }
    };
    let config = PreprocessConfig {
        label_from_dirname: true,
        ..Default::default()
    };
    let ds = preprocess_dir(&dir, &config)?;
    let m = &ds.manifest;
    println!(
        "{} flows ({} x {}), {} skipped packets, ANPF {:.2}, classes {:?}",
        m.flows, m.m, m.l, m.skipped_packets, m.anpf, m.classes
    );
    if let Some(first) = ds.records.first() {
        let flat = flatten(first);
        println!(
            "first flow: label {:?}, {} real packets, bytes {:02x?}",
            first.label,
            first.real_packet_count,
            &flat[..32]
        );
    }
    if let Some(out) = args.next() {
        write_dataset(&out, &ds)?;
        println!("wrote {out}");
    }
    Ok(())
}
