use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use walkdir::WalkDir;

use super::{
    anonymize, normalize_flow, read_pcap, segment_flows, Dataset, DatasetManifest, FlowDirection,
    FlowRecord, IngestError, RawPacket, TOOL_VERSION,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    pub m: usize,
    pub l: usize,
    pub bidirectional: bool,
    pub label_from_dirname: bool,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            m: 5,
            l: 128,
            bidirectional: true,
            label_from_dirname: false,
        }
    }
}

impl PreprocessConfig {
    pub fn direction(&self) -> FlowDirection {
        if self.bidirectional {
            FlowDirection::Bidirectional
        } else {
            FlowDirection::Unidirectional
        }
    }

    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PreprocessSummary {
    pub input_packets: usize,
    pub skipped_packets: usize,
    pub flows: usize,
    /// Sum of per-flow packet counts before truncation to `M`.
    pub flow_packets: usize,
}

impl PreprocessSummary {
    pub fn anpf(&self) -> f64 {
        if self.flows == 0 {
            0.0
        } else {
            self.flow_packets as f64 / self.flows as f64
        }
    }

    fn absorb(&mut self, other: PreprocessSummary) {
        self.input_packets += other.input_packets;
        self.skipped_packets += other.skipped_packets;
        self.flows += other.flows;
        self.flow_packets += other.flow_packets;
    }
}

/// Segments, anonymizes, and normalizes the packets of one capture. Flows come
/// out in order of their first packet.
pub fn preprocess_packets(
    packets: &[RawPacket],
    config: &PreprocessConfig,
    label: Option<u32>,
) -> Result<(Vec<FlowRecord>, PreprocessSummary), IngestError> {
    let seg = segment_flows(packets, config.direction());
    let mut summary = PreprocessSummary {
        input_packets: packets.len(),
        skipped_packets: seg.skipped,
        ..Default::default()
    };
    let mut records = Vec::with_capacity(seg.flows.len());
    for (key, flow) in &seg.flows {
        let anon: Vec<RawPacket> = flow.iter().map(anonymize).collect();
        let mut record = normalize_flow(&anon, config.m, config.l)?;
        record.key = Some(*key);
        record.label = label;
        summary.flows += 1;
        summary.flow_packets += flow.len();
        records.push(record);
    }
    Ok((records, summary))
}

fn pcap_files(dir: &Path) -> Result<Vec<PathBuf>, IngestError> {
    let mut files = Vec::new();
    for entry in WalkDir::new(dir).sort_by_file_name() {
        let entry = entry.map_err(|e| IngestError::Io {
            path: dir.display().to_string(),
            source: e.into(),
        })?;
        if entry.file_type().is_file()
            && entry.path().extension().is_some_and(|e| e.eq_ignore_ascii_case("pcap"))
        {
            files.push(entry.into_path());
        }
    }
    Ok(files)
}

fn class_of(file: &Path) -> String {
    file.parent()
        .and_then(Path::file_name)
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Preprocesses every `*.pcap` under `dir` (sorted by path). With
/// `label_from_dirname`, each file's parent directory name is its class and
/// class ids follow the sorted class names.
pub fn preprocess_dir(dir: impl AsRef<Path>, config: &PreprocessConfig) -> Result<Dataset, IngestError> {
    let files = pcap_files(dir.as_ref())?;
    let classes: Vec<String> = if config.label_from_dirname {
        files
            .iter()
            .map(|f| class_of(f))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    } else {
        Vec::new()
    };
    let mut records = Vec::new();
    let mut summary = PreprocessSummary::default();
    for file in &files {
        let capture = read_pcap(file)?;
        let label = if config.label_from_dirname {
            let name = class_of(file);
            classes.iter().position(|c| *c == name).map(|i| i as u32)
        } else {
            None
        };
        let (mut recs, s) = preprocess_packets(&capture.packets, config, label)?;
        summary.absorb(s);
        summary.skipped_packets += capture.truncated_records + capture.empty_records;
        records.append(&mut recs);
    }
    let manifest = DatasetManifest {
        m: config.m,
        l: config.l,
        classes,
        tool_version: TOOL_VERSION.to_string(),
        config_hash: config.hash(),
        flows: records.len(),
        skipped_packets: summary.skipped_packets,
        anpf: summary.anpf(),
    };
    Ok(Dataset { manifest, records })
}
