//! Synthetic traffic.
//!
//! [`PacketBuilder`] assembles well-formed Ethernet frames (IPv4/IPv6,
//! TCP/UDP, optional VLAN tag and options) and is used throughout the tests
//! and examples. [`SyntheticTraffic`] generates a labeled three-class corpus
//! whose classes differ in TTL pattern, payload byte distribution, and
//! packet-count behaviour.

use std::net::{IpAddr, Ipv4Addr, Ipv6Addr};

use rand::Rng;

use crate::ingest::{preprocess_packets, FlowRecord, PreprocessConfig, RawPacket};
use crate::protocol_map::{ETHERTYPE_IPV4, ETHERTYPE_IPV6, ETHERTYPE_VLAN, IPPROTO_TCP, IPPROTO_UDP};
use crate::rng::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Transport {
    Tcp,
    Udp,
    Other(u8),
}

#[derive(Debug, Clone)]
pub struct PacketBuilder {
    dst_mac: [u8; 6],
    src_mac: [u8; 6],
    vlan: Option<u16>,
    src_ip: IpAddr,
    dst_ip: IpAddr,
    transport: Transport,
    src_port: u16,
    dst_port: u16,
    ttl: u8,
    tos: u8,
    ip_id: u16,
    fragment_offset: u16,
    ip_options: Vec<u8>,
    tcp_seq: u32,
    tcp_ack: u32,
    tcp_flags: u8,
    tcp_window: u16,
    tcp_options: Vec<u8>,
    payload: Vec<u8>,
}

impl PacketBuilder {
    fn base(src: IpAddr, dst: IpAddr, transport: Transport) -> Self {
        Self {
            dst_mac: [0x02, 0x00, 0x00, 0x00, 0x00, 0x02],
            src_mac: [0x02, 0x00, 0x00, 0x00, 0x00, 0x01],
            vlan: None,
            src_ip: src,
            dst_ip: dst,
            transport,
            src_port: 40000,
            dst_port: 443,
            ttl: 64,
            tos: 0,
            ip_id: 1,
            fragment_offset: 0,
            ip_options: Vec::new(),
            tcp_seq: 1000,
            tcp_ack: 0,
            tcp_flags: 0x18,
            tcp_window: 65535,
            tcp_options: Vec::new(),
            payload: Vec::new(),
        }
    }

    fn v4() -> (IpAddr, IpAddr) {
        (
            IpAddr::V4(Ipv4Addr::new(10, 0, 0, 1)),
            IpAddr::V4(Ipv4Addr::new(10, 0, 0, 2)),
        )
    }

    fn v6() -> (IpAddr, IpAddr) {
        (
            IpAddr::V6(Ipv6Addr::new(0xfd00, 0, 0, 0, 0, 0, 0, 1)),
            IpAddr::V6(Ipv6Addr::new(0xfd00, 0, 0, 0, 0, 0, 0, 2)),
        )
    }

    pub fn tcp_v4() -> Self {
        let (s, d) = Self::v4();
        Self::base(s, d, Transport::Tcp)
    }

    pub fn udp_v4() -> Self {
        let (s, d) = Self::v4();
        Self::base(s, d, Transport::Udp)
    }

    pub fn tcp_v6() -> Self {
        let (s, d) = Self::v6();
        Self::base(s, d, Transport::Tcp)
    }

    pub fn udp_v6() -> Self {
        let (s, d) = Self::v6();
        Self::base(s, d, Transport::Udp)
    }

    /// IPv4 with an arbitrary protocol number and no transport header.
    pub fn ipv4_proto(proto: u8) -> Self {
        let (s, d) = Self::v4();
        Self::base(s, d, Transport::Other(proto))
    }

    pub fn macs(mut self, src: [u8; 6], dst: [u8; 6]) -> Self {
        self.src_mac = src;
        self.dst_mac = dst;
        self
    }

    pub fn ips(mut self, src: IpAddr, dst: IpAddr) -> Self {
        self.src_ip = src;
        self.dst_ip = dst;
        self
    }

    pub fn ports(mut self, src: u16, dst: u16) -> Self {
        self.src_port = src;
        self.dst_port = dst;
        self
    }

    pub fn ttl(mut self, ttl: u8) -> Self {
        self.ttl = ttl;
        self
    }

    pub fn tos(mut self, tos: u8) -> Self {
        self.tos = tos;
        self
    }

    pub fn ip_id(mut self, id: u16) -> Self {
        self.ip_id = id;
        self
    }

    pub fn vlan(mut self, tci: u16) -> Self {
        self.vlan = Some(tci);
        self
    }

    pub fn fragment_offset(mut self, offset: u16) -> Self {
        self.fragment_offset = offset;
        self
    }

    /// Options must be a multiple of 4 bytes.
    pub fn ip_options(mut self, options: Vec<u8>) -> Self {
        assert!(options.len().is_multiple_of(4) && options.len() <= 40);
        self.ip_options = options;
        self
    }

    /// Options must be a multiple of 4 bytes.
    pub fn tcp_options(mut self, options: Vec<u8>) -> Self {
        assert!(options.len().is_multiple_of(4) && options.len() <= 40);
        self.tcp_options = options;
        self
    }

    pub fn tcp_seq_ack(mut self, seq: u32, ack: u32) -> Self {
        self.tcp_seq = seq;
        self.tcp_ack = ack;
        self
    }

    pub fn tcp_flags(mut self, flags: u8) -> Self {
        self.tcp_flags = flags;
        self
    }

    pub fn tcp_window(mut self, window: u16) -> Self {
        self.tcp_window = window;
        self
    }

    pub fn payload(mut self, payload: Vec<u8>) -> Self {
        self.payload = payload;
        self
    }

    fn transport_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        match self.transport {
            Transport::Tcp => {
                let data_offset = (20 + self.tcp_options.len()) / 4;
                out.extend_from_slice(&self.src_port.to_be_bytes());
                out.extend_from_slice(&self.dst_port.to_be_bytes());
                out.extend_from_slice(&self.tcp_seq.to_be_bytes());
                out.extend_from_slice(&self.tcp_ack.to_be_bytes());
                out.push((data_offset as u8) << 4);
                out.push(self.tcp_flags);
                out.extend_from_slice(&self.tcp_window.to_be_bytes());
                out.extend_from_slice(&[0, 0, 0, 0]);
                out.extend_from_slice(&self.tcp_options);
            }
            Transport::Udp => {
                let len = (8 + self.payload.len()) as u16;
                out.extend_from_slice(&self.src_port.to_be_bytes());
                out.extend_from_slice(&self.dst_port.to_be_bytes());
                out.extend_from_slice(&len.to_be_bytes());
                out.extend_from_slice(&[0, 0]);
            }
            Transport::Other(_) => {}
        }
        out.extend_from_slice(&self.payload);
        out
    }

    fn proto(&self) -> u8 {
        match self.transport {
            Transport::Tcp => IPPROTO_TCP,
            Transport::Udp => IPPROTO_UDP,
            Transport::Other(p) => p,
        }
    }

    pub fn build(&self) -> Vec<u8> {
        let mut frame = Vec::with_capacity(128);
        frame.extend_from_slice(&self.dst_mac);
        frame.extend_from_slice(&self.src_mac);
        let ethertype = match self.src_ip {
            IpAddr::V4(_) => ETHERTYPE_IPV4,
            IpAddr::V6(_) => ETHERTYPE_IPV6,
        };
        if let Some(tci) = self.vlan {
            frame.extend_from_slice(&ETHERTYPE_VLAN.to_be_bytes());
            frame.extend_from_slice(&tci.to_be_bytes());
        }
        frame.extend_from_slice(&ethertype.to_be_bytes());
        let transport = self.transport_bytes();
        match (self.src_ip, self.dst_ip) {
            (IpAddr::V4(src), IpAddr::V4(dst)) => {
                let header_len = 20 + self.ip_options.len();
                let total = (header_len + transport.len()) as u16;
                let mut ip = Vec::with_capacity(header_len);
                ip.push(0x40 | (header_len / 4) as u8);
                ip.push(self.tos);
                ip.extend_from_slice(&total.to_be_bytes());
                ip.extend_from_slice(&self.ip_id.to_be_bytes());
                ip.extend_from_slice(&(self.fragment_offset & 0x1FFF).to_be_bytes());
                ip.push(self.ttl);
                ip.push(self.proto());
                ip.extend_from_slice(&[0, 0]);
                ip.extend_from_slice(&src.octets());
                ip.extend_from_slice(&dst.octets());
                ip.extend_from_slice(&self.ip_options);
                let sum = ipv4_checksum(&ip);
                ip[10..12].copy_from_slice(&sum.to_be_bytes());
                frame.extend_from_slice(&ip);
            }
            (IpAddr::V6(src), IpAddr::V6(dst)) => {
                frame.extend_from_slice(&[0x60, self.tos >> 4, 0, 0]);
                frame.extend_from_slice(&(transport.len() as u16).to_be_bytes());
                frame.push(self.proto());
                frame.push(self.ttl);
                frame.extend_from_slice(&src.octets());
                frame.extend_from_slice(&dst.octets());
            }
            _ => panic!("source and destination must share an address family"),
        }
        frame.extend_from_slice(&transport);
        frame
    }
}

fn ipv4_checksum(header: &[u8]) -> u16 {
    let mut sum: u32 = header
        .chunks(2)
        .map(|c| u32::from(u16::from_be_bytes([c[0], *c.get(1).unwrap_or(&0)])))
        .sum();
    while sum > 0xFFFF {
        sum = (sum & 0xFFFF) + (sum >> 16);
    }
    !(sum as u16)
}

/// Labeled synthetic flows. Each flow is a list of frames in capture order.
#[derive(Debug, Clone)]
pub struct SyntheticFlow {
    pub label: u32,
    pub packets: Vec<RawPacket>,
}

/// Three-class synthetic traffic.
///
/// * class 0 (`bulk`): TCP, TTL 60–64, 4–8 packets, uniformly random
///   (ciphertext-like) payloads.
/// * class 1 (`interactive`): TCP, TTL 120–128, 2–3 packets, printable
///   ASCII payloads.
/// * class 2 (`telemetry`): UDP, TTL drawn from {32, 255}, 1–4 packets,
///   low-entropy payloads (a repeated byte with a counter).
#[derive(Debug, Clone, Copy)]
pub struct SyntheticTraffic {
    pub seed: u64,
}

impl SyntheticTraffic {
    pub const CLASS_NAMES: [&'static str; 3] = ["bulk", "interactive", "telemetry"];

    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    /// Flow `index` of class `label`; a pure function of `(seed, label, index)`.
    pub fn flow(&self, label: u32, index: u64) -> SyntheticFlow {
        let mut rng = rng_for(self.seed, &[u64::from(label), index]);
        let client = IpAddr::V4(Ipv4Addr::new(10, rng.random(), rng.random(), rng.random_range(1..255)));
        let server = IpAddr::V4(Ipv4Addr::new(172, 16, rng.random(), rng.random_range(1..255)));
        let cport: u16 = rng.random_range(1024..65535);
        let (n_packets, sport) = match label {
            0 => (rng.random_range(4..=8), 443),
            1 => (rng.random_range(2..=3), 22),
            _ => (rng.random_range(1..=4), 5683),
        };
        let base_ttl: u8 = match label {
            0 => rng.random_range(60..=64),
            1 => rng.random_range(120..=128),
            _ => {
                if rng.random_bool(0.5) {
                    32
                } else {
                    255
                }
            }
        };
        let mut seq: u32 = rng.random();
        let mut t_us: u64 = 1_700_000_000_000_000 + rng.random_range(0..1_000_000_000);
        let mut packets = Vec::with_capacity(n_packets);
        for i in 0..n_packets {
            let outbound = i % 2 == 0;
            let (src, dst, sp, dp) = if outbound {
                (client, server, cport, sport)
            } else {
                (server, client, sport, cport)
            };
            let payload_len = match label {
                0 => rng.random_range(200..1400),
                1 => rng.random_range(8..80),
                _ => rng.random_range(12..40),
            };
            let payload: Vec<u8> = match label {
                0 => (0..payload_len).map(|_| rng.random()).collect(),
                1 => (0..payload_len).map(|_| rng.random_range(0x20..0x7F)).collect(),
                _ => {
                    let fill: u8 = rng.random_range(0..4);
                    (0..payload_len)
                        .map(|j| if j % 8 == 0 { i as u8 } else { fill })
                        .collect()
                }
            };
            let ttl = if outbound { base_ttl } else { base_ttl.saturating_sub(rng.random_range(0..3)) };
            let builder = match label {
                2 => PacketBuilder::udp_v4(),
                _ => PacketBuilder::tcp_v4()
                    .tcp_seq_ack(seq, seq.wrapping_add(1))
                    .tcp_flags(if i == 0 { 0x02 } else { 0x18 }),
            };
            let frame = builder
                .macs(rng.random(), rng.random())
                .ips(src, dst)
                .ports(sp, dp)
                .ttl(ttl)
                .ip_id(rng.random())
                .payload(payload)
                .build();
            seq = seq.wrapping_add(payload_len as u32);
            t_us += rng.random_range(100..50_000);
            packets.push(RawPacket {
                capture_index: i as u64,
                timestamp_us: t_us,
                link_bytes: frame,
            });
        }
        SyntheticFlow { label, packets }
    }

    /// `per_class` flows of every class, interleaved by index.
    pub fn labeled(&self, per_class: usize) -> Vec<SyntheticFlow> {
        let mut out = Vec::with_capacity(per_class * 3);
        for i in 0..per_class as u64 {
            for label in 0..3 {
                out.push(self.flow(label, i));
            }
        }
        out
    }

    /// [`SyntheticTraffic::labeled`] passed through segmentation,
    /// anonymization, and normalization; one record per flow.
    pub fn labeled_records(&self, per_class: usize, config: &PreprocessConfig) -> Vec<FlowRecord> {
        self.labeled(per_class)
            .iter()
            .flat_map(|f| {
                preprocess_packets(&f.packets, config, Some(f.label))
                    .expect("synthetic flows are well formed")
                    .0
            })
            .collect()
    }
}
