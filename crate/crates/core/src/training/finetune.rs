use std::collections::BTreeMap;

use rand::seq::{index, SliceRandom};
use serde::Serialize;

use super::pretrain::check_shapes;
use super::{clip_grad_norm, lr_at, Adam, FinetuneConfig, FinetuneLogRow, FinetuneMode, TrainingError};
use crate::corruption::{augment_packet, augment_protocol, TokenSequence};
use crate::eval::evaluate_model;
use crate::ingest::FlowRecord;
use crate::model::{ModelCheckpoint, Nethira};
use crate::protocol_map::FieldSpanMap;
use crate::rng::{derive_seed, rng_for};

/// Per-batch means of one optimizer step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FinetuneBatch {
    pub epoch: usize,
    pub batch: usize,
    pub l_sup: f64,
    pub l_cons: f64,
    pub l_total: f64,
}

#[derive(Debug, Clone)]
pub struct FinetuneOutcome {
    /// Parameters after the epoch with the best validation macro-F1 (earliest
    /// on ties).
    pub checkpoint: ModelCheckpoint<f32>,
    pub log: Vec<FinetuneLogRow>,
    pub batches: Vec<FinetuneBatch>,
    pub best_epoch: usize,
    /// Indices into the training set that survived `label_fraction`.
    pub train_indices: Vec<usize>,
}

fn label_of(record: &FlowRecord, index: usize, n_classes: usize) -> Result<usize, TrainingError> {
    match record.label {
        Some(l) if (l as usize) < n_classes => Ok(l as usize),
        label => Err(TrainingError::LabelMismatch {
            index,
            label,
            n_classes,
        }),
    }
}

/// Keeps `⌈fraction × count⌉` records (at least one) of every class, drawn
/// uniformly; returned indices are in original order, so `fraction = 1`
/// keeps everything unchanged.
pub fn stratified_subsample(records: &[FlowRecord], fraction: f64, seed: u64) -> Result<Vec<usize>, TrainingError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(TrainingError::InvalidConfig("label_fraction must be in (0, 1]".into()));
    }
    let mut by_class: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        let label = r.label.ok_or(TrainingError::LabelMismatch {
            index: i,
            label: None,
            n_classes: 0,
        })?;
        by_class.entry(label).or_default().push(i);
    }
    let mut keep = Vec::new();
    for (class, members) in by_class {
        let n = members.len();
        // The epsilon keeps products such as 0.07 × 100 from rounding up.
        let k = ((fraction * n as f64 - 1e-9).ceil() as usize).clamp(1, n);
        if k == n {
            keep.extend(members);
        } else {
            let mut rng = rng_for(seed, &[0x57A7, u64::from(class)]);
            keep.extend(index::sample(&mut rng, n, k).iter().map(|i| members[i]));
        }
    }
    keep.sort_unstable();
    Ok(keep)
}

struct Item<'a> {
    record: &'a FlowRecord,
    seq: TokenSequence,
    maps: Vec<FieldSpanMap>,
    label: usize,
}

/// Fine-tunes for `config.epochs` epochs on the stratified label subset of
/// `train` and keeps the epoch with the best validation macro-F1.
///
/// Each labeled flow gives a clean view, a field-shuffled view, and a
/// packet-dropped view per epoch (seeds from `(seed, epoch, index)`);
/// `sup-only` skips the augmented views and uses λ = 0.
pub fn finetune(
    config: &FinetuneConfig,
    init: Option<&ModelCheckpoint<f32>>,
    train: &[FlowRecord],
    val: &[FlowRecord],
) -> Result<FinetuneOutcome, TrainingError> {
    config.validate()?;
    let first = train
        .first()
        .ok_or_else(|| TrainingError::InvalidConfig("training set is empty".into()))?;
    if val.is_empty() {
        return Err(TrainingError::InvalidConfig("validation set is empty".into()));
    }
    let shape = (first.m(), first.l());
    check_shapes(train.iter().chain(val), shape)?;
    let n_classes = match config.n_classes {
        Some(n) => n,
        None => train.iter().chain(val).filter_map(|r| r.label).max().map_or(0, |l| l as usize + 1),
    };
    for (i, r) in train.iter().chain(val).enumerate() {
        label_of(r, i, n_classes)?;
    }

    let mut model = match (config.mode, init) {
        (FinetuneMode::FromScratch, _) => {
            let mut c = config.model.clone();
            c.max_len = shape.0 * shape.1;
            c.n_classes = None;
            Nethira::<f32>::new(c, derive_seed(config.seed, &[0x5C]))?
        }
        (_, Some(ckpt)) => ckpt.model.clone(),
        (mode, None) => return Err(TrainingError::MissingInit(mode)),
    };
    if model.config().n_classes != Some(n_classes) {
        model.attach_classifier(n_classes, derive_seed(config.seed, &[0xC1]))?;
    }

    let train_indices = stratified_subsample(train, config.label_fraction, config.seed)?;
    let items: Vec<Item<'_>> = train_indices
        .iter()
        .map(|&i| {
            let record = &train[i];
            Ok(Item {
                record,
                seq: TokenSequence::from_record(record),
                maps: record.field_maps(),
                label: label_of(record, i, n_classes)?,
            })
        })
        .collect::<Result<_, TrainingError>>()?;

    let lambda = config.effective_lambda() as f32;
    let use_views = config.mode != FinetuneMode::SupOnly;
    let batch = config.batch_size.min(items.len());
    let per_epoch = items.len().div_ceil(batch);
    let warmup = (config.warmup_ratio * (per_epoch * config.epochs) as f64).round() as usize;
    let mut adam = Adam::new(&model.weights);
    let mut grads = model.zero_grads();
    let mut step = 0usize;
    let mut log = Vec::with_capacity(config.epochs);
    let mut batches = Vec::new();
    let mut best: Option<(f64, usize, Nethira<f32>, usize)> = None;

    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..items.len()).collect();
        order.shuffle(&mut rng_for(config.seed, &[0xE90C, epoch as u64]));
        let (mut epoch_sup, mut epoch_cons) = (0.0f64, 0.0f64);
        for (b, chunk) in order.chunks(batch).enumerate() {
            grads.fill_zero();
            let scale = 1.0 / chunk.len() as f32;
            let (mut sup, mut cons) = (0.0f64, 0.0f64);
            for &i in chunk {
                let item = &items[i];
                let seed = derive_seed(config.seed, &[epoch as u64, train_indices[i] as u64]);
                let views = if use_views {
                    let c = &config.corruption;
                    let protocol = augment_protocol(item.record, &item.maps, c.shuffle_within_layer, seed);
                    let packet = augment_packet(item.record, c.drop_prob, seed)?;
                    Some((protocol, packet))
                } else {
                    None
                };
                let loss = model.finetune_loss_and_grad(
                    &item.seq,
                    views.as_ref().map(|(p, k)| (p, k)),
                    item.label,
                    lambda,
                    config.stop_grad_raw,
                    scale,
                    Some(&mut grads),
                )?;
                sup += f64::from(loss.sup);
                cons += f64::from(loss.cons);
            }
            let n = chunk.len() as f64;
            let row = FinetuneBatch {
                epoch: epoch + 1,
                batch: b,
                l_sup: sup / n,
                l_cons: cons / n,
                l_total: (sup + f64::from(lambda) * cons) / n,
            };
            if !row.l_total.is_finite() {
                return Err(TrainingError::NonFiniteFinetuneLoss {
                    epoch: row.epoch,
                    batch: b,
                    l_sup: row.l_sup,
                    l_cons: row.l_cons,
                });
            }
            if let Some(max) = config.grad_clip {
                clip_grad_norm(&mut grads, max);
            }
            adam.step(&mut model.weights, &grads, lr_at(step, config.lr, warmup));
            step += 1;
            epoch_sup += sup;
            epoch_cons += cons;
            batches.push(row);
        }
        let val_f1 = evaluate_model(&model, val)
            .map_err(|e| TrainingError::Evaluation(e.to_string()))?
            .macro_avg
            .f1;
        let n = items.len() as f64;
        let row = FinetuneLogRow {
            epoch: epoch + 1,
            l_sup: epoch_sup / n,
            l_cons: epoch_cons / n,
            val_f1,
        };
        log::info!(
            "epoch {} l_sup {:.4} l_cons {:.4} val_f1 {:.4}",
            row.epoch,
            row.l_sup,
            row.l_cons,
            row.val_f1
        );
        log.push(row);
        if best.as_ref().is_none_or(|b| val_f1 > b.0) {
            best = Some((val_f1, epoch + 1, model.clone(), step));
        }
    }
    let (_, best_epoch, best_model, best_step) = best.expect("at least one epoch ran");
    let best_step = best_step as u64;
    Ok(FinetuneOutcome {
        checkpoint: ModelCheckpoint::new(best_model, best_step, derive_seed(config.seed, &[best_step])),
        log,
        batches,
        best_epoch,
        train_indices,
    })
}
