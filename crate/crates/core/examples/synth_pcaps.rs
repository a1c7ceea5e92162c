//! Writes synthetic captures as `<dir>/<class>/flows.pcap`, ready for
//! `nethira preprocess --label-from-dirname`.
//!
//! ```text
//! cargo run --release --example synth_pcaps -- <dir> [per_class] [seed]
//! ```

use std::path::PathBuf;

use anyhow::Context;
use nethira::ingest::write_pcap;
use nethira::synthetic::SyntheticTraffic;

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().context("usage: synth_pcaps <dir> [per_class] [seed]")?);
    let per_class: usize = args.next().map_or(Ok(100), |s| s.parse())?;
    let seed: u64 = args.next().map_or(Ok(7), |s| s.parse())?;
    let traffic = SyntheticTraffic::new(seed);
    for (label, name) in SyntheticTraffic::CLASS_NAMES.iter().enumerate() {
        let mut packets = Vec::new();
        for i in 0..per_class as u64 {
            packets.extend(traffic.flow(label as u32, i).packets);
        }
        packets.sort_by_key(|p| p.timestamp_us);
        for (i, p) in packets.iter_mut().enumerate() {
            p.capture_index = i as u64;
        }
        let class_dir = dir.join(name);
        std::fs::create_dir_all(&class_dir)?;
        let path = class_dir.join("flows.pcap");
        write_pcap(&path, &packets)?;
        println!("{}: {} packets", path.display(), packets.len());
    }
    Ok(())
}
