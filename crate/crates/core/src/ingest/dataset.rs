//! Dataset files: one JSON object per line,
//! `{"label": int|null, "real_packet_count": int, "packets": [base64; M]}`,
//! plus a sidecar `<file>.manifest.json`.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{FlowRecord, IngestError, NormalizedPacket};

pub const TOOL_VERSION: &str = concat!("nethira ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub m: usize,
    pub l: usize,
    /// Class names indexed by label id.
    pub classes: Vec<String>,
    pub tool_version: String,
    pub config_hash: String,
    pub flows: usize,
    pub skipped_packets: usize,
    /// Average number of packets per flow, counted before truncation to `M`.
    pub anpf: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub records: Vec<FlowRecord>,
}

#[derive(Serialize, Deserialize)]
struct Line {
    label: Option<u32>,
    real_packet_count: usize,
    packets: Vec<String>,
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    path.with_file_name(name)
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> IngestError + '_ {
    move |source| IngestError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn encode_line(record: &FlowRecord) -> String {
    let line = Line {
        label: record.label,
        real_packet_count: record.real_packet_count,
        packets: record.packets.iter().map(|p| B64.encode(&p.bytes)).collect(),
    };
    serde_json::to_string(&line).expect("dataset line serializes")
}

pub fn write_dataset(path: impl AsRef<Path>, dataset: &Dataset) -> Result<(), IngestError> {
    let path = path.as_ref();
    let mut w = BufWriter::new(fs::File::create(path).map_err(io_err(path))?);
    for record in &dataset.records {
        writeln!(w, "{}", encode_line(record)).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))?;
    let mpath = manifest_path(path);
    let json = serde_json::to_string_pretty(&dataset.manifest).expect("manifest serializes");
    fs::write(&mpath, json + "\n").map_err(io_err(&mpath))
}

pub fn read_manifest(dataset_path: impl AsRef<Path>) -> Result<DatasetManifest, IngestError> {
    let mpath = manifest_path(dataset_path.as_ref());
    let text = fs::read_to_string(&mpath).map_err(io_err(&mpath))?;
    serde_json::from_str(&text).map_err(|e| IngestError::MalformedDataset {
        line: 0,
        reason: format!("manifest: {e}"),
    })
}

fn decode_line(text: &str, line: usize, m: usize, l: usize) -> Result<FlowRecord, IngestError> {
    let bad = |reason: String| IngestError::MalformedDataset { line, reason };
    let parsed: Line = serde_json::from_str(text).map_err(|e| bad(e.to_string()))?;
    if parsed.packets.len() != m {
        return Err(bad(format!("expected {m} packets, found {}", parsed.packets.len())));
    }
    if parsed.real_packet_count == 0 || parsed.real_packet_count > m {
        return Err(bad(format!("real_packet_count {} out of range", parsed.real_packet_count)));
    }
    let packets = parsed
        .packets
        .iter()
        .map(|s| {
            let bytes = B64.decode(s).map_err(|e| bad(e.to_string()))?;
            if bytes.len() != l {
                return Err(bad(format!("packet has {} bytes, expected {l}", bytes.len())));
            }
            Ok(NormalizedPacket {
                bytes,
                original_length: None,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(FlowRecord {
        key: None,
        packets,
        real_packet_count: parsed.real_packet_count,
        label: parsed.label,
    })
}

/// Reads a dataset and its manifest; every line must match the manifest's
/// `M` and `L`.
pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset, IngestError> {
    let path = path.as_ref();
    let manifest = read_manifest(path)?;
    let reader = BufReader::new(fs::File::open(path).map_err(io_err(path))?);
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(decode_line(&line, i + 1, manifest.m, manifest.l)?);
    }
    Ok(Dataset { manifest, records })
}
