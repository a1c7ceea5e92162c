//! Classic libpcap capture files (not pcapng).

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use super::{IngestError, RawPacket};

pub const MAGIC_MICROS: u32 = 0xA1B2_C3D4;
pub const MAGIC_NANOS: u32 = 0xA1B2_3C4D;
pub const MAGIC_PCAPNG: u32 = 0x0A0D_0D0A;
pub const LINKTYPE_ETHERNET: u32 = 1;

const GLOBAL_HEADER_LEN: usize = 24;
const RECORD_HEADER_LEN: usize = 16;

/// Packets read from one capture plus bookkeeping about records that were
/// dropped on the way.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Capture {
    pub packets: Vec<RawPacket>,
    /// A trailing record cut short by the end of the file.
    pub truncated_records: usize,
    /// Records with zero captured bytes.
    pub empty_records: usize,
}

pub fn read_pcap(path: impl AsRef<Path>) -> Result<Capture, IngestError> {
    let path = path.as_ref();
    let mut data = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut data))
        .map_err(|source| IngestError::Io {
            path: path.display().to_string(),
            source,
        })?;
    parse_pcap(&data)
}

pub fn parse_pcap(data: &[u8]) -> Result<Capture, IngestError> {
    if data.len() >= 4 {
        let raw = u32::from_le_bytes([data[0], data[1], data[2], data[3]]);
        if raw == MAGIC_PCAPNG {
            return Err(IngestError::UnsupportedFormat(
                "pcapng captures are not supported; convert to classic pcap".into(),
            ));
        }
    }
    if data.len() < GLOBAL_HEADER_LEN {
        return Err(IngestError::CorruptHeader(format!(
            "{} bytes is shorter than the 24-byte global header",
            data.len()
        )));
    }
    let magic_le = u32::from_le_bytes([data[0], data[1], data[2], data[3]]);
    let (big_endian, nanos) = match magic_le {
        MAGIC_MICROS => (false, false),
        MAGIC_NANOS => (false, true),
        m if m.swap_bytes() == MAGIC_MICROS => (true, false),
        m if m.swap_bytes() == MAGIC_NANOS => (true, true),
        m => {
            return Err(IngestError::UnsupportedFormat(format!(
                "unknown magic number {m:#010x}"
            )))
        }
    };
    let word = |at: usize| {
        let b = [data[at], data[at + 1], data[at + 2], data[at + 3]];
        if big_endian {
            u32::from_be_bytes(b)
        } else {
            u32::from_le_bytes(b)
        }
    };
    let linktype = word(20) & 0x0FFF_FFFF;
    if linktype != LINKTYPE_ETHERNET {
        return Err(IngestError::UnsupportedFormat(format!(
            "link type {linktype} (only Ethernet is supported)"
        )));
    }

    let mut capture = Capture::default();
    let mut at = GLOBAL_HEADER_LEN;
    let mut index = 0u64;
    while at < data.len() {
        if at + RECORD_HEADER_LEN > data.len() {
            capture.truncated_records += 1;
            break;
        }
        let ts_sec = u64::from(word(at));
        let ts_frac = u64::from(word(at + 4));
        let incl_len = word(at + 8) as usize;
        let body = at + RECORD_HEADER_LEN;
        if body + incl_len > data.len() {
            capture.truncated_records += 1;
            break;
        }
        let timestamp_us = ts_sec * 1_000_000 + if nanos { ts_frac / 1000 } else { ts_frac };
        if incl_len == 0 {
            capture.empty_records += 1;
        } else {
            capture.packets.push(RawPacket {
                capture_index: index,
                timestamp_us,
                link_bytes: data[body..body + incl_len].to_vec(),
            });
        }
        index += 1;
        at = body + incl_len;
    }
    if capture.truncated_records > 0 {
        log::warn!(
            "skipped {} truncated trailing record(s)",
            capture.truncated_records
        );
    }
    Ok(capture)
}

/// Serializes packets as a little-endian, microsecond-resolution classic pcap
/// with Ethernet link type. Output depends only on the packets.
pub fn encode_pcap(packets: &[RawPacket]) -> Vec<u8> {
    let mut out = Vec::with_capacity(
        GLOBAL_HEADER_LEN + packets.iter().map(|p| RECORD_HEADER_LEN + p.link_bytes.len()).sum::<usize>(),
    );
    out.extend_from_slice(&MAGIC_MICROS.to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&4u16.to_le_bytes());
    out.extend_from_slice(&0i32.to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    out.extend_from_slice(&65535u32.to_le_bytes());
    out.extend_from_slice(&LINKTYPE_ETHERNET.to_le_bytes());
    for p in packets {
        let len = p.link_bytes.len() as u32;
        out.extend_from_slice(&((p.timestamp_us / 1_000_000) as u32).to_le_bytes());
        out.extend_from_slice(&((p.timestamp_us % 1_000_000) as u32).to_le_bytes());
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(&p.link_bytes);
    }
    out
}

pub fn write_pcap(path: impl AsRef<Path>, packets: &[RawPacket]) -> Result<(), IngestError> {
    let path = path.as_ref();
    let io = |source| IngestError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    w.write_all(&encode_pcap(packets)).map_err(io)?;
    w.flush().map_err(io)
}
