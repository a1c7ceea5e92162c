use rand::seq::index;

use super::{clip_grad_norm, lr_at, Adam, PretrainConfig, PretrainLogRow, TrainingError};
use crate::corruption::{
    corrupt_byte, corrupt_packet, corrupt_protocol, CorruptionConfig, CorruptionError, CorruptionKind,
    TokenSequence, TrainingSample,
};
use crate::ingest::FlowRecord;
use crate::model::{ModelCheckpoint, Nethira};
use crate::protocol_map::FieldSpanMap;
use crate::rng::{derive_seed, rng_for};

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub checkpoint: ModelCheckpoint<f32>,
    pub log: Vec<PretrainLogRow>,
}

struct Item<'a> {
    record: &'a FlowRecord,
    seq: TokenSequence,
    maps: Vec<FieldSpanMap>,
}

pub(super) fn check_shapes<'a>(
    records: impl IntoIterator<Item = &'a FlowRecord>,
    expected: (usize, usize),
) -> Result<(), TrainingError> {
    for r in records {
        let found = (r.m(), r.l());
        if found != expected {
            return Err(TrainingError::ShapeMismatch { expected, found });
        }
    }
    Ok(())
}

/// One corrupted view of `item` for `task`. Flows with fewer than two real
/// packets, and flows without any parsable header field, fall back to byte
/// masking for the packet and protocol tasks respectively.
fn make_sample(
    task: CorruptionKind,
    item: &Item<'_>,
    c: &CorruptionConfig,
    seed: u64,
) -> Result<TrainingSample, CorruptionError> {
    match task {
        CorruptionKind::Byte => corrupt_byte(&item.seq, c.mask_ratio, seed),
        CorruptionKind::Protocol => {
            match corrupt_protocol(&item.seq, &item.maps, c.protocol_k, c.protocol_spans, c.vicinity_jitter, seed) {
                Err(CorruptionError::NoEligibleSpans) => corrupt_byte(&item.seq, c.mask_ratio, seed),
                other => other,
            }
        }
        CorruptionKind::Packet if item.record.real_packet_count < 2 => {
            corrupt_byte(&item.seq, c.packet_mask_ratio, seed)
        }
        CorruptionKind::Packet => corrupt_packet(item.record, c.packet_mask_ratio, seed),
    }
}

fn task_slot(task: CorruptionKind) -> usize {
    match task {
        CorruptionKind::Byte => 0,
        CorruptionKind::Protocol => 1,
        CorruptionKind::Packet => 2,
    }
}

/// Runs `config.steps` Adam updates on the sum of the selected reconstruction
/// losses. Each step draws `batch_size` distinct flows; every flow contributes
/// one freshly corrupted sample per task. The logged terms are batch means.
pub fn pretrain(config: &PretrainConfig, corpus: &[FlowRecord]) -> Result<PretrainOutcome, TrainingError> {
    config.validate()?;
    let first = corpus.first().ok_or(TrainingError::EmptyCorpus)?;
    let shape = (first.m(), first.l());
    check_shapes(corpus, shape)?;

    let mut model_config = config.model.clone();
    model_config.max_len = shape.0 * shape.1;
    model_config.n_classes = None;
    let mut model = Nethira::<f32>::new(model_config, derive_seed(config.seed, &[0x1417]))?;

    let items: Vec<Item<'_>> = corpus
        .iter()
        .map(|record| Item {
            record,
            seq: TokenSequence::from_record(record),
            maps: record.field_maps(),
        })
        .collect();
    let mut tasks = config.tasks.clone();
    tasks.sort_by_key(|&t| task_slot(t));
    tasks.dedup();

    let batch = config.batch_size.min(items.len());
    let scale = 1.0 / batch as f32;
    let warmup = config.warmup();
    let mut adam = Adam::new(&model.weights);
    let mut grads = model.zero_grads();
    let mut log = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        grads.fill_zero();
        let mut rng = rng_for(config.seed, &[0x57E9, step as u64]);
        let picks = index::sample(&mut rng, items.len(), batch);
        let mut sums = [0.0f64; 3];
        for (j, idx) in picks.iter().enumerate() {
            for &task in &tasks {
                let slot = task_slot(task);
                let seed = derive_seed(config.seed, &[step as u64, j as u64, slot as u64]);
                let sample = make_sample(task, &items[idx], &config.corruption, seed)?;
                let loss = model.reconstruction_loss_and_grad(&sample, scale, Some(&mut grads))?;
                sums[slot] += f64::from(loss);
            }
        }
        let row = PretrainLogRow {
            step: step + 1,
            l_byte: sums[0] / batch as f64,
            l_protocol: sums[1] / batch as f64,
            l_packet: sums[2] / batch as f64,
        };
        if !row.total().is_finite() {
            return Err(TrainingError::NonFiniteLoss {
                step: row.step,
                l_byte: row.l_byte,
                l_protocol: row.l_protocol,
                l_packet: row.l_packet,
            });
        }
        if let Some(max) = config.grad_clip {
            clip_grad_norm(&mut grads, max);
        }
        adam.step(&mut model.weights, &grads, lr_at(step, config.lr, warmup));
        log::debug!(
            "step {} l_byte {:.4} l_protocol {:.4} l_packet {:.4}",
            row.step,
            row.l_byte,
            row.l_protocol,
            row.l_packet
        );
        log.push(row);
    }
    let steps = config.steps as u64;
    Ok(PretrainOutcome {
        checkpoint: ModelCheckpoint::new(model, steps, derive_seed(config.seed, &[steps])),
        log,
    })
}
