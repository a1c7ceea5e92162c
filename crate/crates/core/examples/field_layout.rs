//! Prints the header field layout of a few packet shapes.
//!
//! ```text
//! cargo run --example field_layout
//! ```

use std::net::{IpAddr, Ipv6Addr};

use nethira::protocol_map::parse_packet_fields;
use nethira::synthetic::PacketBuilder;

fn main() {
    let v6 = |n: u16| IpAddr::V6(Ipv6Addr::new(0x2001, 0xdb8, 0, 0, 0, 0, 0, n));
    let packets = [
        ("TCP over IPv4", PacketBuilder::tcp_v4().payload(vec![0; 16]).build()),
        ("UDP over IPv4", PacketBuilder::udp_v4().payload(vec![0; 16]).build()),
        (
            "TCP over IPv6",
            PacketBuilder::tcp_v6().ips(v6(1), v6(2)).payload(vec![0; 8]).build(),
        ),
        ("VLAN-tagged UDP", PacketBuilder::udp_v4().vlan(0x0064).build()),
        (
            "IPv4 options, TCP options",
            PacketBuilder::tcp_v4()
                .ip_options(vec![1, 1, 1, 0])
                .tcp_options(vec![2, 4, 0x05, 0xb4])
                .build(),
        ),
        ("truncated at 30 bytes", PacketBuilder::tcp_v4().build()[..30].to_vec()),
    ];
    for (name, bytes) in &packets {
        println!("== {name} ({} bytes)", bytes.len());
        print!("{}", parse_packet_fields(bytes, 0).to_table());
        println!();
    }
}
