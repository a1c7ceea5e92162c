//! Hierarchical masked-reconstruction pre-training and consistency-regularized
//! fine-tuning of a byte-level transformer encoder–decoder for network
//! traffic classification.
//!
//! The pipeline, module by module:
//!
//! * [`ingest`]: classic PCAP files → five-tuple flows → anonymized,
//!   fixed-shape [`FlowRecord`](ingest::FlowRecord)s of `M` packets × `L` bytes.
//! * [`protocol_map`]: header field layout of each packet.
//! * [`corruption`]: byte-, protocol-, and packet-level corrupted training
//!   samples, and protocol/packet augmentation for fine-tuning.
//! * [`model`]: embedding, encoder, decoder, reconstruction and classification
//!   heads, losses with hand-written gradients, checkpoints.
//! * [`training`]: pre-training and fine-tuning loops with Adam.
//! * [`eval`]: dataset splits, PR/RC/F1 metrics, limited-label sweeps, and
//!   ablations.
//!
//! Runnable walkthroughs of each stage live in `examples/`.

pub mod corruption;
pub mod eval;
pub mod ingest;
pub mod model;
pub mod protocol_map;
pub mod rng;
pub mod synthetic;
pub mod training;
