//! Shows the three pre-training corruptions and the two fine-tuning views of
//! one synthetic flow.
//!
//! ```text
//! cargo run --example corruption_tasks -- [seed]
//! ```

use nethira::corruption::{
    augment_packet, augment_protocol, corrupt_byte, corrupt_packet, corrupt_protocol, CorruptionConfig,
    TokenSequence, TrainingSample,
};
use nethira::ingest::PreprocessConfig;
use nethira::synthetic::SyntheticTraffic;

const SHOW: usize = 48;

fn row(tokens: &[u16]) -> String {
    tokens[..SHOW.min(tokens.len())]
        .iter()
        .map(|&t| if t > 255 { " __".to_string() } else { format!(" {t:02x}") })
        .collect()
}

fn show(name: &str, s: &TrainingSample) {
    let p = &s.plan.masked_positions;
    println!("{name}: {} masked positions, first {:?}", p.len(), &p[..p.len().min(8)]);
    if s.plan.permutation.iter().enumerate().any(|(i, &v)| i != v) {
        println!("  permutation {:?}", s.plan.permutation);
    }
    println!("  input {}", row(&s.input.tokens));
    println!("  target{}", row(&s.target.tokens));
}

fn main() -> anyhow::Result<()> {
    let seed: u64 = std::env::args().nth(1).map_or(Ok(3), |s| s.parse())?;
    let prep = PreprocessConfig {
        m: 4,
        l: 64,
        ..Default::default()
    };
    // Class 0 flows carry at least four packets.
    let record = SyntheticTraffic::new(5)
        .labeled_records(1, &prep)
        .into_iter()
        .next()
        .expect("one flow per class");
    let c = CorruptionConfig::default();
    let x = TokenSequence::from_record(&record);
    let maps = record.field_maps();
    println!("flow: {} real packets of {}, first {SHOW} bytes shown\n", record.real_packet_count, prep.m);
    show("byte", &corrupt_byte(&x, c.mask_ratio, seed)?);
    show(
        "protocol",
        &corrupt_protocol(&x, &maps, c.protocol_k, c.protocol_spans, c.vicinity_jitter, seed)?,
    );
    show("packet", &corrupt_packet(&record, c.packet_mask_ratio, seed)?);
    let prot = augment_protocol(&record, &maps, c.shuffle_within_layer, seed);
    let pack = augment_packet(&record, c.drop_prob, seed)?;
    println!("\nfield-shuffled view {}", row(&prot.tokens));
    println!("packet-dropped view  {} ({} of {} packets kept)", row(&pack.tokens), pack.real_packets(), record.real_packet_count);
    Ok(())
}
