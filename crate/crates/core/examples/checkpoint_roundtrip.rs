//! Saves a freshly initialized model with a classifier head, loads it back,
//! and checks that predictions are bitwise identical.
//!
//! ```text
//! cargo run --example checkpoint_roundtrip
//! ```

use nethira::corruption::TokenSequence;
use nethira::ingest::PreprocessConfig;
use nethira::model::{load_checkpoint, save_checkpoint, ModelCheckpoint, ModelConfig, Nethira};
use nethira::synthetic::SyntheticTraffic;

fn main() -> anyhow::Result<()> {
    let prep = PreprocessConfig {
        m: 4,
        l: 64,
        ..Default::default()
    };
    let mut model = Nethira::<f32>::new(ModelConfig::tiny(prep.m * prep.l), 11)?;
    model.attach_classifier(3, 12)?;
    let ckpt = ModelCheckpoint::new(model, 0, 13);
    let path = std::env::temp_dir().join("nethira-roundtrip.ckpt");
    save_checkpoint(&ckpt, &path)?;
    let loaded = load_checkpoint::<f32>(&path)?;
    println!(
        "{}: {} bytes, {} parameters",
        path.display(),
        std::fs::metadata(&path)?.len(),
        loaded.model.weights.n_params()
    );
    for record in SyntheticTraffic::new(2).labeled_records(2, &prep) {
        let seq = TokenSequence::from_record(&record);
        let a = ckpt.model.classify(&seq)?;
        let b = loaded.model.classify(&seq)?;
        assert_eq!(a.logits, b.logits);
        println!("label {:?}: logits {:?}", record.label, b.logits.to_vec());
    }
    println!("round trip is exact");
    Ok(())
}
