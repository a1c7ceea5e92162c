//! Header field layout of Ethernet frames.
//!
//! [`parse_fields`] walks Ethernet, an optional single 802.1Q tag, IPv4 or
//! IPv6, and TCP or UDP, emitting one [`FieldSpan`] per standard header field.
//! The walk stops at the first layer it cannot parse or the first field that
//! does not fit in the buffer, so the result is always a prefix of the full
//! layout. Protocol-level masking and protocol-level augmentation both work on
//! these spans.

use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;

pub const ETHERTYPE_IPV4: u16 = 0x0800;
pub const ETHERTYPE_IPV6: u16 = 0x86DD;
pub const ETHERTYPE_VLAN: u16 = 0x8100;
pub const IPPROTO_TCP: u8 = 6;
pub const IPPROTO_UDP: u8 = 17;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Layer {
    Eth,
    Ipv4,
    Ipv6,
    Tcp,
    Udp,
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Layer::Eth => "ETH",
            Layer::Ipv4 => "IPV4",
            Layer::Ipv6 => "IPV6",
            Layer::Tcp => "TCP",
            Layer::Udp => "UDP",
        };
        f.write_str(s)
    }
}

/// One header field: `length` bytes starting at `offset` within the packet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct FieldSpan {
    pub offset: usize,
    pub length: usize,
    pub layer: Layer,
    pub name: &'static str,
}

impl FieldSpan {
    pub fn end(&self) -> usize {
        self.offset + self.length
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.end()
    }
}

/// Field layout of one packet. Spans are sorted, non-overlapping, and all lie
/// in `[0, header_end)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FieldSpanMap {
    pub packet_index: usize,
    pub spans: Vec<FieldSpan>,
    pub header_end: usize,
}

impl FieldSpanMap {
    pub fn span(&self, name: &str) -> Option<&FieldSpan> {
        self.spans.iter().find(|s| s.name == name)
    }

    pub fn has_layer(&self, layer: Layer) -> bool {
        self.spans.iter().any(|s| s.layer == layer)
    }

    /// Plain-text table, one span per line.
    pub fn to_table(&self) -> String {
        let mut out = format!(
            "packet {}  header_end {}\n{:>6} {:>6}  {:<5} name\n",
            self.packet_index, self.header_end, "offset", "length", "layer"
        );
        for s in &self.spans {
            out.push_str(&format!(
                "{:>6} {:>6}  {:<5} {}\n",
                s.offset, s.length, s.layer, s.name
            ));
        }
        out
    }
}

struct Walker<'a> {
    bytes: &'a [u8],
    cursor: usize,
    spans: Vec<FieldSpan>,
}

impl<'a> Walker<'a> {
    fn push(&mut self, name: &'static str, layer: Layer, length: usize) -> Option<usize> {
        let offset = self.cursor;
        if length == 0 || offset + length > self.bytes.len() {
            return None;
        }
        self.spans.push(FieldSpan {
            offset,
            length,
            layer,
            name,
        });
        self.cursor += length;
        Some(offset)
    }

    fn byte(&self, at: usize) -> Option<u8> {
        self.bytes.get(at).copied()
    }

    fn u16_at(&self, at: usize) -> Option<u16> {
        Some(u16::from_be_bytes([self.byte(at)?, self.byte(at + 1)?]))
    }

    fn ethernet(&mut self) -> Option<()> {
        self.push("eth.dst", Layer::Eth, 6)?;
        self.push("eth.src", Layer::Eth, 6)?;
        let at = self.push("eth.type", Layer::Eth, 2)?;
        let mut ethertype = self.u16_at(at)?;
        if ethertype == ETHERTYPE_VLAN {
            self.push("eth.vlan_tci", Layer::Eth, 2)?;
            let at = self.push("eth.vlan_type", Layer::Eth, 2)?;
            ethertype = self.u16_at(at)?;
        }
        match ethertype {
            ETHERTYPE_IPV4 => self.ipv4(),
            ETHERTYPE_IPV6 => self.ipv6(),
            _ => None,
        }
    }

    fn ipv4(&mut self) -> Option<()> {
        let start = self.cursor;
        let ver_ihl = self.byte(start)?;
        let ihl = usize::from(ver_ihl & 0x0F);
        if ver_ihl >> 4 != 4 || ihl < 5 {
            return None;
        }
        self.push("ip.version_ihl", Layer::Ipv4, 1)?;
        self.push("ip.tos", Layer::Ipv4, 1)?;
        self.push("ip.len", Layer::Ipv4, 2)?;
        self.push("ip.id", Layer::Ipv4, 2)?;
        let frag_at = self.push("ip.flags_frag", Layer::Ipv4, 2)?;
        self.push("ip.ttl", Layer::Ipv4, 1)?;
        let proto_at = self.push("ip.proto", Layer::Ipv4, 1)?;
        self.push("ip.checksum", Layer::Ipv4, 2)?;
        self.push("ip.src", Layer::Ipv4, 4)?;
        self.push("ip.dst", Layer::Ipv4, 4)?;
        if ihl > 5 {
            self.push("ip.options", Layer::Ipv4, ihl * 4 - 20)?;
        }
        // Non-first fragments carry no transport header.
        if self.u16_at(frag_at)? & 0x1FFF != 0 {
            return None;
        }
        self.transport(self.byte(proto_at)?)
    }

    fn ipv6(&mut self) -> Option<()> {
        if self.byte(self.cursor)? >> 4 != 6 {
            return None;
        }
        self.push("ip6.version_tc_flow", Layer::Ipv6, 4)?;
        self.push("ip6.payload_len", Layer::Ipv6, 2)?;
        let nh_at = self.push("ip6.next_header", Layer::Ipv6, 1)?;
        self.push("ip6.hop_limit", Layer::Ipv6, 1)?;
        self.push("ip6.src", Layer::Ipv6, 16)?;
        self.push("ip6.dst", Layer::Ipv6, 16)?;
        self.transport(self.byte(nh_at)?)
    }

    fn transport(&mut self, proto: u8) -> Option<()> {
        match proto {
            IPPROTO_TCP => self.tcp(),
            IPPROTO_UDP => self.udp(),
            _ => None,
        }
    }

    fn tcp(&mut self) -> Option<()> {
        let start = self.cursor;
        // Validate the data offset up front when it is visible; a header cut
        // short by the buffer still yields the fields that fit.
        let data_offset = self.byte(start + 12).map(|b| usize::from(b >> 4));
        if matches!(data_offset, Some(d) if d < 5) {
            return None;
        }
        self.push("tcp.srcport", Layer::Tcp, 2)?;
        self.push("tcp.dstport", Layer::Tcp, 2)?;
        self.push("tcp.seq", Layer::Tcp, 4)?;
        self.push("tcp.ack", Layer::Tcp, 4)?;
        self.push("tcp.data_offset", Layer::Tcp, 1)?;
        self.push("tcp.flags", Layer::Tcp, 1)?;
        self.push("tcp.window", Layer::Tcp, 2)?;
        self.push("tcp.checksum", Layer::Tcp, 2)?;
        self.push("tcp.urgent", Layer::Tcp, 2)?;
        let data_offset = data_offset?;
        if data_offset > 5 {
            self.push("tcp.options", Layer::Tcp, data_offset * 4 - 20)?;
        }
        Some(())
    }

    fn udp(&mut self) -> Option<()> {
        self.push("udp.srcport", Layer::Udp, 2)?;
        self.push("udp.dstport", Layer::Udp, 2)?;
        self.push("udp.len", Layer::Udp, 2)?;
        self.push("udp.checksum", Layer::Udp, 2)?;
        Some(())
    }
}

/// Computes the header field layout of `bytes` (an Ethernet frame, possibly
/// truncated or zero-padded). Never fails: an unparseable layer ends the map.
pub fn parse_fields(bytes: &[u8]) -> FieldSpanMap {
    let mut walker = Walker {
        bytes,
        cursor: 0,
        spans: Vec::new(),
    };
    let _ = walker.ethernet();
    let header_end = walker.spans.last().map_or(0, FieldSpan::end);
    FieldSpanMap {
        packet_index: 0,
        spans: walker.spans,
        header_end,
    }
}

/// [`parse_fields`] tagged with the packet's index within its flow.
pub fn parse_packet_fields(bytes: &[u8], packet_index: usize) -> FieldSpanMap {
    FieldSpanMap {
        packet_index,
        ..parse_fields(bytes)
    }
}

/// Permutes the contents of header fields at span granularity.
///
/// The span blocks are shuffled and their concatenation is written back, in
/// order, over the byte positions the spans originally covered. Bytes outside
/// every span are untouched and the length never changes. With
/// `within_layer`, blocks only trade places with blocks of the same layer.
pub fn shuffle_fields<R: Rng + ?Sized>(
    bytes: &[u8],
    map: &FieldSpanMap,
    within_layer: bool,
    rng: &mut R,
) -> Vec<u8> {
    let mut out = bytes.to_vec();
    if within_layer {
        let mut layers: Vec<Layer> = map.spans.iter().map(|s| s.layer).collect();
        layers.dedup();
        for layer in layers {
            let group: Vec<FieldSpan> = map
                .spans
                .iter()
                .filter(|s| s.layer == layer)
                .copied()
                .collect();
            permute_blocks(bytes, &mut out, &group, rng);
        }
    } else {
        permute_blocks(bytes, &mut out, &map.spans, rng);
    }
    out
}

fn permute_blocks<R: Rng + ?Sized>(src: &[u8], dst: &mut [u8], spans: &[FieldSpan], rng: &mut R) {
    if spans.len() < 2 {
        return;
    }
    let mut order: Vec<usize> = (0..spans.len()).collect();
    order.shuffle(rng);
    let content = order.iter().flat_map(|&i| &src[spans[i].range()]);
    let slots = spans.iter().flat_map(FieldSpan::range);
    for (slot, &byte) in slots.zip(content) {
        dst[slot] = byte;
    }
}
