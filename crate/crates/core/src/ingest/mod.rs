//! PCAP ingestion: reading captures, splitting them into five-tuple flows,
//! zeroing address fields, and normalizing each flow to `M` packets of `L`
//! bytes.

mod dataset;
mod pcap;
mod pipeline;

use std::cmp::Ordering;
use std::fmt;
use std::net::{IpAddr, Ipv4Addr, Ipv6Addr};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol_map::{parse_fields, FieldSpanMap};

pub use dataset::{
    encode_line, manifest_path, read_dataset, read_manifest, write_dataset, Dataset, DatasetManifest, TOOL_VERSION,
};
pub use pcap::{encode_pcap, parse_pcap, read_pcap, write_pcap, Capture};
pub use pipeline::{preprocess_dir, preprocess_packets, PreprocessConfig, PreprocessSummary};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("unsupported capture format: {0}")]
    UnsupportedFormat(String),
    #[error("corrupt capture header: {0}")]
    CorruptHeader(String),
    #[error("flow has no packets")]
    EmptyFlow,
    #[error("invalid shape: M={m}, L={l} (both must be at least 1)")]
    InvalidShape { m: usize, l: usize },
    #[error("malformed dataset at line {line}: {reason}")]
    MalformedDataset { line: usize, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// A captured link-layer frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawPacket {
    pub capture_index: u64,
    pub timestamp_us: u64,
    pub link_bytes: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transport {
    Tcp,
    Udp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FlowDirection {
    Bidirectional,
    Unidirectional,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FlowKey {
    pub src_ip: IpAddr,
    pub src_port: u16,
    pub dst_ip: IpAddr,
    pub dst_port: u16,
    pub transport: Transport,
}

impl FlowKey {
    /// Orders the endpoints so that both directions of a session share a key.
    pub fn canonical(self) -> Self {
        let a = (self.src_ip, self.src_port);
        let b = (self.dst_ip, self.dst_port);
        if a.cmp(&b) == Ordering::Greater {
            Self {
                src_ip: self.dst_ip,
                src_port: self.dst_port,
                dst_ip: self.src_ip,
                dst_port: self.src_port,
                transport: self.transport,
            }
        } else {
            self
        }
    }
}

impl fmt::Display for FlowKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let t = match self.transport {
            Transport::Tcp => "tcp",
            Transport::Udp => "udp",
        };
        write!(
            f,
            "{t} {}:{} -> {}:{}",
            self.src_ip, self.src_port, self.dst_ip, self.dst_port
        )
    }
}

/// One packet cut or zero-padded to exactly `L` bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NormalizedPacket {
    pub bytes: Vec<u8>,
    /// Captured length before truncation or padding; `None` for padding
    /// packets and for packets loaded from a dataset file, which does not
    /// store it.
    pub original_length: Option<usize>,
}

impl NormalizedPacket {
    pub fn from_bytes(bytes: &[u8], l: usize) -> Self {
        let mut out = vec![0u8; l];
        let n = bytes.len().min(l);
        out[..n].copy_from_slice(&bytes[..n]);
        Self {
            bytes: out,
            original_length: Some(bytes.len()),
        }
    }

    pub fn padding(l: usize) -> Self {
        Self {
            bytes: vec![0u8; l],
            original_length: None,
        }
    }

    pub fn len(&self) -> usize {
        self.bytes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }
}

/// A flow as `M` packets of `L` bytes. Packets at index `real_packet_count`
/// and beyond are all-zero padding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlowRecord {
    /// `None` when the record came from a dataset file.
    pub key: Option<FlowKey>,
    pub packets: Vec<NormalizedPacket>,
    pub real_packet_count: usize,
    pub label: Option<u32>,
}

impl FlowRecord {
    pub fn m(&self) -> usize {
        self.packets.len()
    }

    pub fn l(&self) -> usize {
        self.packets.first().map_or(0, NormalizedPacket::len)
    }

    /// Field layouts of every packet, indexed by packet position.
    pub fn field_maps(&self) -> Vec<FieldSpanMap> {
        self.packets
            .iter()
            .enumerate()
            .map(|(i, p)| crate::protocol_map::parse_packet_fields(&p.bytes, i))
            .collect()
    }
}

fn read_ip(bytes: &[u8], map: &FieldSpanMap, name: &str) -> Option<IpAddr> {
    let span = map.span(name)?;
    let raw = &bytes[span.range()];
    match raw.len() {
        4 => Some(IpAddr::V4(Ipv4Addr::new(raw[0], raw[1], raw[2], raw[3]))),
        16 => {
            let octets: [u8; 16] = raw.try_into().ok()?;
            Some(IpAddr::V6(Ipv6Addr::from(octets)))
        }
        _ => None,
    }
}

fn read_port(bytes: &[u8], map: &FieldSpanMap, name: &str) -> Option<u16> {
    let span = map.span(name)?;
    Some(u16::from_be_bytes([bytes[span.offset], bytes[span.offset + 1]]))
}

/// The directional five-tuple of a frame, or `None` if it is not TCP/UDP over
/// IPv4/IPv6 (or is cut short before the ports).
pub fn five_tuple(bytes: &[u8]) -> Option<FlowKey> {
    let map = parse_fields(bytes);
    let (src_ip, dst_ip) = match (read_ip(bytes, &map, "ip.src"), read_ip(bytes, &map, "ip.dst")) {
        (Some(s), Some(d)) => (s, d),
        _ => (read_ip(bytes, &map, "ip6.src")?, read_ip(bytes, &map, "ip6.dst")?),
    };
    let (transport, src_port, dst_port) = if let Some(sp) = read_port(bytes, &map, "tcp.srcport") {
        (Transport::Tcp, sp, read_port(bytes, &map, "tcp.dstport")?)
    } else {
        (
            Transport::Udp,
            read_port(bytes, &map, "udp.srcport")?,
            read_port(bytes, &map, "udp.dstport")?,
        )
    };
    Some(FlowKey {
        src_ip,
        src_port,
        dst_ip,
        dst_port,
        transport,
    })
}

/// Packets grouped by flow, keyed in order of first appearance.
#[derive(Debug, Clone, Default)]
pub struct Segmentation {
    pub flows: IndexMap<FlowKey, Vec<RawPacket>>,
    /// Packets that are not TCP/UDP or could not be parsed that far.
    pub skipped: usize,
}

pub fn segment_flows(packets: &[RawPacket], direction: FlowDirection) -> Segmentation {
    let mut seg = Segmentation::default();
    for p in packets {
        match five_tuple(&p.link_bytes) {
            Some(key) => {
                let key = match direction {
                    FlowDirection::Bidirectional => key.canonical(),
                    FlowDirection::Unidirectional => key,
                };
                seg.flows.entry(key).or_default().push(p.clone());
            }
            None => seg.skipped += 1,
        }
    }
    seg
}

const ZEROED_FIELDS: [&str; 10] = [
    "eth.dst",
    "eth.src",
    "ip.src",
    "ip.dst",
    "ip6.src",
    "ip6.dst",
    "tcp.srcport",
    "tcp.dstport",
    "udp.srcport",
    "udp.dstport",
];

/// Zeroes MAC addresses, IP addresses, and TCP/UDP ports in place. Layers
/// absent from the frame are skipped; checksums are left as captured.
pub fn anonymize_bytes(bytes: &mut [u8]) {
    let map = parse_fields(bytes);
    for span in map.spans.iter().filter(|s| ZEROED_FIELDS.contains(&s.name)) {
        bytes[span.range()].fill(0);
    }
}

pub fn anonymize(packet: &RawPacket) -> RawPacket {
    let mut out = packet.clone();
    anonymize_bytes(&mut out.link_bytes);
    out
}

/// Keeps the first `m` packets, cut or zero-padded to `l` bytes each, and pads
/// the flow with all-zero packets up to `m`.
pub fn normalize_flow(flow: &[RawPacket], m: usize, l: usize) -> Result<FlowRecord, IngestError> {
    if m == 0 || l == 0 {
        return Err(IngestError::InvalidShape { m, l });
    }
    if flow.is_empty() {
        return Err(IngestError::EmptyFlow);
    }
    let real = flow.len().min(m);
    let mut packets: Vec<NormalizedPacket> = flow[..real]
        .iter()
        .map(|p| NormalizedPacket::from_bytes(&p.link_bytes, l))
        .collect();
    packets.resize_with(m, || NormalizedPacket::padding(l));
    Ok(FlowRecord {
        key: None,
        packets,
        real_packet_count: real,
        label: None,
    })
}

/// Concatenation of all `M` packets: `M × L` bytes.
pub fn flatten(record: &FlowRecord) -> Vec<u8> {
    let mut out = Vec::with_capacity(record.m() * record.l());
    for p in &record.packets {
        out.extend_from_slice(&p.bytes);
    }
    out
}
