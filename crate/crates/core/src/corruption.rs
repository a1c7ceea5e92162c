//! Corrupted inputs and reconstruction targets for the three pre-training
//! tasks, and the two fine-tuning augmentations.
//!
//! Every operation takes an explicit seed; the same inputs and seed always
//! give the same output.

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{flatten, FlowRecord};
use crate::protocol_map::{shuffle_fields, FieldSpanMap};
use crate::rng::{rng_for, SeededRng};

pub const PAD: u16 = 256;
pub const MASK: u16 = 257;
pub const BOS: u16 = 258;
pub const VOCAB_SIZE: usize = 259;

#[derive(Debug, Error, PartialEq)]
pub enum CorruptionError {
    #[error("ratio {0} outside (0, 1)")]
    InvalidRatio(f64),
    #[error("drop probability {0} outside [0, 1)")]
    InvalidDropProb(f64),
    #[error("span length must be at least 1")]
    InvalidSpanLength,
    #[error("sequence has no non-padding positions")]
    NoEligiblePositions,
    #[error("no header field spans in any non-padding packet")]
    NoEligibleSpans,
    #[error("packet permutation needs at least 2 real packets, found {0}")]
    TooFewPackets(usize),
    #[error("expected {expected} field maps, found {found}")]
    MapCountMismatch { expected: usize, found: usize },
}

/// A flattened flow as token ids. Positions from `valid_len` on belong to
/// padding packets; they hold zero bytes and are never masked.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TokenSequence {
    pub tokens: Vec<u16>,
    pub packet_len: usize,
    pub valid_len: usize,
}

impl TokenSequence {
    pub fn from_record(record: &FlowRecord) -> Self {
        Self::from_bytes(&flatten(record), record.l(), record.real_packet_count)
    }

    pub fn from_bytes(bytes: &[u8], packet_len: usize, real_packets: usize) -> Self {
        Self {
            tokens: bytes.iter().map(|&b| u16::from(b)).collect(),
            packet_len,
            valid_len: (real_packets * packet_len).min(bytes.len()),
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn real_packets(&self) -> usize {
        if self.packet_len == 0 {
            0
        } else {
            self.valid_len / self.packet_len
        }
    }

    /// True when every id is a plain byte value.
    pub fn is_pure_bytes(&self) -> bool {
        self.tokens.iter().all(|&t| t < 256)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorruptionKind {
    Byte,
    Protocol,
    Packet,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorruptionPlan {
    pub kind: CorruptionKind,
    /// Sorted, distinct positions in `[0, M×L)`.
    pub masked_positions: Vec<usize>,
    /// Slot `i` of the target holds original packet `permutation[i]`.
    pub permutation: Vec<usize>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingSample {
    pub input: TokenSequence,
    pub target: TokenSequence,
    pub plan: CorruptionPlan,
}

/// Knobs shared by pre-training corruption and fine-tuning augmentation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorruptionConfig {
    pub mask_ratio: f64,
    pub protocol_k: usize,
    pub protocol_spans: usize,
    /// Starts are drawn from `span.offset + j` for `j` in `0..=vicinity_jitter`.
    pub vicinity_jitter: usize,
    pub packet_mask_ratio: f64,
    pub drop_prob: f64,
    pub shuffle_within_layer: bool,
}

impl Default for CorruptionConfig {
    fn default() -> Self {
        Self {
            mask_ratio: 0.15,
            protocol_k: 4,
            protocol_spans: 8,
            vicinity_jitter: 1,
            packet_mask_ratio: 0.15,
            drop_prob: 0.2,
            shuffle_within_layer: false,
        }
    }
}

fn check_ratio(ratio: f64) -> Result<(), CorruptionError> {
    if ratio > 0.0 && ratio < 1.0 {
        Ok(())
    } else {
        Err(CorruptionError::InvalidRatio(ratio))
    }
}

fn masked_copy(seq: &TokenSequence, positions: &[usize]) -> TokenSequence {
    let mut out = seq.clone();
    for &p in positions {
        out.tokens[p] = MASK;
    }
    out
}

fn sample_byte_positions(
    valid_len: usize,
    ratio: f64,
    rng: &mut SeededRng,
) -> Result<Vec<usize>, CorruptionError> {
    check_ratio(ratio)?;
    if valid_len == 0 {
        return Err(CorruptionError::NoEligiblePositions);
    }
    let count = ((ratio * valid_len as f64).ceil() as usize).clamp(1, valid_len);
    let mut positions = index::sample(rng, valid_len, count).into_vec();
    positions.sort_unstable();
    Ok(positions)
}

/// Masks `⌈ratio × eligible⌉` positions drawn uniformly without replacement
/// from the non-padding positions.
pub fn corrupt_byte(x: &TokenSequence, ratio: f64, seed: u64) -> Result<TrainingSample, CorruptionError> {
    let mut rng = rng_for(seed, &[0xB7]);
    let positions = sample_byte_positions(x.valid_len, ratio, &mut rng)?;
    Ok(TrainingSample {
        input: masked_copy(x, &positions),
        target: x.clone(),
        plan: CorruptionPlan {
            kind: CorruptionKind::Byte,
            masked_positions: positions,
            permutation: Vec::new(),
            seed,
        }
        .with_identity(x),
    })
}

impl CorruptionPlan {
    fn with_identity(mut self, x: &TokenSequence) -> Self {
        let m = if x.packet_len == 0 { 0 } else { x.len() / x.packet_len };
        self.permutation = (0..m).collect();
        self
    }
}

/// Allowed starts for protocol masking, as global positions, sorted and
/// distinct: every field boundary of every real packet plus up to `jitter`
/// bytes into it, kept inside the packet.
pub fn protocol_start_set(x: &TokenSequence, maps: &[FieldSpanMap], jitter: usize) -> Vec<usize> {
    let l = x.packet_len;
    let mut starts: Vec<usize> = maps
        .iter()
        .enumerate()
        .take(x.real_packets())
        .flat_map(|(pkt, map)| {
            map.spans.iter().flat_map(move |s| {
                (0..=jitter)
                    .map(move |j| s.offset + j)
                    .filter(move |&o| o < l)
                    .map(move |o| pkt * l + o)
            })
        })
        .collect();
    starts.sort_unstable();
    starts.dedup();
    starts
}

/// Masks runs of up to `k` bytes starting at field boundaries (or within
/// `jitter` bytes after them). `n_spans` distinct starts are drawn uniformly;
/// each run stops at the end of its packet.
pub fn corrupt_protocol(
    x: &TokenSequence,
    maps: &[FieldSpanMap],
    k: usize,
    n_spans: usize,
    jitter: usize,
    seed: u64,
) -> Result<TrainingSample, CorruptionError> {
    if k == 0 || n_spans == 0 {
        return Err(CorruptionError::InvalidSpanLength);
    }
    let m = x.len() / x.packet_len.max(1);
    if maps.len() != m {
        return Err(CorruptionError::MapCountMismatch {
            expected: m,
            found: maps.len(),
        });
    }
    let allowed = protocol_start_set(x, maps, jitter);
    if allowed.is_empty() {
        return Err(CorruptionError::NoEligibleSpans);
    }
    let mut rng = rng_for(seed, &[0x9A]);
    let picks = index::sample(&mut rng, allowed.len(), n_spans.min(allowed.len()));
    let l = x.packet_len;
    let mut positions: Vec<usize> = picks
        .iter()
        .flat_map(|i| {
            let start = allowed[i];
            let packet_end = (start / l + 1) * l;
            start..(start + k).min(packet_end)
        })
        .collect();
    positions.sort_unstable();
    positions.dedup();
    Ok(TrainingSample {
        input: masked_copy(x, &positions),
        target: x.clone(),
        plan: CorruptionPlan {
            kind: CorruptionKind::Protocol,
            masked_positions: positions,
            permutation: Vec::new(),
            seed,
        }
        .with_identity(x),
    })
}

fn is_identity(p: &[usize]) -> bool {
    p.iter().enumerate().all(|(i, &v)| i == v)
}

/// Reorders the real packets by a uniformly drawn non-identity permutation,
/// then masks bytes of the reordered sequence at `ratio`. The target is the
/// reordered, unmasked sequence.
pub fn corrupt_packet(record: &FlowRecord, ratio: f64, seed: u64) -> Result<TrainingSample, CorruptionError> {
    check_ratio(ratio)?;
    let real = record.real_packet_count;
    if real < 2 {
        return Err(CorruptionError::TooFewPackets(real));
    }
    let mut rng = rng_for(seed, &[0x5E]);
    let mut head: Vec<usize> = (0..real).collect();
    loop {
        head.shuffle(&mut rng);
        if !is_identity(&head) {
            break;
        }
    }
    let permutation: Vec<usize> = head.into_iter().chain(real..record.m()).collect();
    let mut permuted = record.clone();
    permuted.packets = permutation.iter().map(|&i| record.packets[i].clone()).collect();
    let target = TokenSequence::from_record(&permuted);
    let positions = sample_byte_positions(target.valid_len, ratio, &mut rng)?;
    Ok(TrainingSample {
        input: masked_copy(&target, &positions),
        target,
        plan: CorruptionPlan {
            kind: CorruptionKind::Packet,
            masked_positions: positions,
            permutation,
            seed,
        },
    })
}

/// Shuffles header fields of every real packet independently.
pub fn augment_protocol(
    record: &FlowRecord,
    maps: &[FieldSpanMap],
    within_layer: bool,
    seed: u64,
) -> TokenSequence {
    let mut rng = rng_for(seed, &[0xA9]);
    let mut out = record.clone();
    for (packet, map) in out
        .packets
        .iter_mut()
        .zip(maps)
        .take(record.real_packet_count)
    {
        packet.bytes = shuffle_fields(&packet.bytes, map, within_layer, &mut rng);
    }
    TokenSequence::from_record(&out)
}

/// Drops each real packet with probability `drop_prob` (keeping one at random
/// if all would drop), shuffles the survivors, and repacks them from slot 0.
pub fn augment_packet(record: &FlowRecord, drop_prob: f64, seed: u64) -> Result<TokenSequence, CorruptionError> {
    if !(0.0..1.0).contains(&drop_prob) {
        return Err(CorruptionError::InvalidDropProb(drop_prob));
    }
    let mut rng = rng_for(seed, &[0xAF]);
    let real = record.real_packet_count;
    let mut survivors: Vec<usize> = (0..real).filter(|_| !rng.random_bool(drop_prob)).collect();
    if survivors.is_empty() && real > 0 {
        survivors.push(rng.random_range(0..real));
    }
    survivors.shuffle(&mut rng);
    let l = record.l();
    let mut bytes = Vec::with_capacity(record.m() * l);
    for &i in &survivors {
        bytes.extend_from_slice(&record.packets[i].bytes);
    }
    bytes.resize(record.m() * l, 0);
    Ok(TokenSequence::from_bytes(&bytes, l, survivors.len()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{normalize_flow, RawPacket};
    use crate::protocol_map::{parse_fields, FieldSpan, Layer};

    fn record(n: usize, m: usize, l: usize) -> FlowRecord {
        let packets: Vec<RawPacket> = (0..n)
            .map(|i| RawPacket {
                capture_index: i as u64,
                timestamp_us: 0,
                link_bytes: vec![i as u8 + 1; l],
            })
            .collect();
        normalize_flow(&packets, m, l).unwrap()
    }

    #[test]
    fn tiny_ratio_masks_exactly_one() {
        let x = TokenSequence::from_record(&record(5, 5, 128));
        let s = corrupt_byte(&x, 1e-9, 1).unwrap();
        assert_eq!(s.plan.masked_positions.len(), 1);
    }

    #[test]
    fn default_ratio_on_640() {
        let x = TokenSequence::from_record(&record(5, 5, 128));
        let s = corrupt_byte(&x, 0.15, 1).unwrap();
        assert_eq!(s.plan.masked_positions.len(), 96);
        assert_eq!(s.plan.permutation, vec![0, 1, 2, 3, 4]);
        assert_eq!(s, corrupt_byte(&x, 0.15, 1).unwrap());
    }

    #[test]
    fn byte_errors() {
        let x = TokenSequence::from_record(&record(1, 2, 4));
        assert_eq!(corrupt_byte(&x, 0.0, 0), Err(CorruptionError::InvalidRatio(0.0)));
        assert_eq!(corrupt_byte(&x, 1.0, 0), Err(CorruptionError::InvalidRatio(1.0)));
        let empty = TokenSequence::from_bytes(&[0; 8], 4, 0);
        assert_eq!(corrupt_byte(&empty, 0.5, 0), Err(CorruptionError::NoEligiblePositions));
    }

    fn single_span_map(offset: usize, length: usize, index: usize) -> FieldSpanMap {
        FieldSpanMap {
            packet_index: index,
            spans: vec![FieldSpan {
                offset,
                length,
                layer: Layer::Ipv4,
                name: "ip.ttl",
            }],
            header_end: offset + length,
        }
    }

    #[test]
    fn protocol_single_choice() {
        let rec = record(1, 2, 64);
        let x = TokenSequence::from_record(&rec);
        let maps = vec![single_span_map(22, 1, 0), single_span_map(22, 1, 1)];
        let s = corrupt_protocol(&x, &maps, 1, 1, 0, 9).unwrap();
        assert_eq!(s.plan.masked_positions, vec![22]);
        let s = corrupt_protocol(&x, &maps, 4, 1, 0, 9).unwrap();
        assert_eq!(s.plan.masked_positions, vec![22, 23, 24, 25]);
    }

    #[test]
    fn protocol_run_stops_at_packet_end() {
        let rec = record(2, 2, 16);
        let x = TokenSequence::from_record(&rec);
        let maps = vec![single_span_map(14, 2, 0), single_span_map(14, 2, 1)];
        let s = corrupt_protocol(&x, &maps, 8, 4, 0, 3).unwrap();
        assert_eq!(s.plan.masked_positions, vec![14, 15, 30, 31]);
    }

    #[test]
    fn protocol_errors() {
        let rec = record(1, 1, 8);
        let x = TokenSequence::from_record(&rec);
        let empty = vec![FieldSpanMap {
            packet_index: 0,
            spans: vec![],
            header_end: 0,
        }];
        assert_eq!(
            corrupt_protocol(&x, &empty, 4, 8, 1, 0),
            Err(CorruptionError::NoEligibleSpans)
        );
        assert!(matches!(
            corrupt_protocol(&x, &[], 4, 8, 1, 0),
            Err(CorruptionError::MapCountMismatch { .. })
        ));
        assert_eq!(
            corrupt_protocol(&x, &empty, 0, 8, 1, 0),
            Err(CorruptionError::InvalidSpanLength)
        );
    }

    #[test]
    fn two_packet_permutation_is_the_swap() {
        let rec = record(2, 5, 8);
        for seed in 0..50 {
            let s = corrupt_packet(&rec, 0.2, seed).unwrap();
            assert_eq!(s.plan.permutation, vec![1, 0, 2, 3, 4]);
            assert_eq!(s.target.tokens[0], 2);
            assert_eq!(s.target.tokens[8], 1);
        }
        assert_eq!(
            corrupt_packet(&record(1, 5, 8), 0.2, 0),
            Err(CorruptionError::TooFewPackets(1))
        );
    }

    #[test]
    fn augment_packet_no_drop_single_packet_is_identity() {
        let rec = record(1, 3, 8);
        let out = augment_packet(&rec, 0.0, 4).unwrap();
        assert_eq!(out, TokenSequence::from_record(&rec));
        assert!(augment_packet(&rec, 1.0, 0).is_err());
    }

    #[test]
    fn augment_protocol_with_real_header() {
        let pkt = crate::synthetic::PacketBuilder::tcp_v4()
            .payload((0..40).collect())
            .build();
        let rec = normalize_flow(
            &[RawPacket {
                capture_index: 0,
                timestamp_us: 0,
                link_bytes: pkt,
            }],
            2,
            96,
        )
        .unwrap();
        let maps = rec.field_maps();
        let header_end = parse_fields(&rec.packets[0].bytes).header_end;
        let out = augment_protocol(&rec, &maps, false, 5);
        let orig = TokenSequence::from_record(&rec);
        assert_eq!(out.tokens[header_end..], orig.tokens[header_end..]);
        assert!(out.is_pure_bytes());
        assert_eq!(out.valid_len, orig.valid_len);
    }
}
