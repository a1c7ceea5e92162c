use nethira::protocol_map::{parse_fields, parse_packet_fields, shuffle_fields, FieldSpanMap};
use nethira::rng::rng_for;
use nethira::synthetic::PacketBuilder;
use proptest::prelude::*;
use rand::seq::SliceRandom;

#[derive(Debug, Clone)]
struct Header {
    v6: bool,
    udp: bool,
    vlan: bool,
    ip_words: usize,
    tcp_words: usize,
    payload: Vec<u8>,
}

impl Header {
    fn build(&self) -> Vec<u8> {
        let mut b = match (self.v6, self.udp) {
            (false, false) => PacketBuilder::tcp_v4(),
            (false, true) => PacketBuilder::udp_v4(),
            (true, false) => PacketBuilder::tcp_v6(),
            (true, true) => PacketBuilder::udp_v6(),
        };
        if self.vlan {
            b = b.vlan(7);
        }
        if !self.v6 {
            b = b.ip_options(vec![1; 4 * self.ip_words]);
        }
        if !self.udp {
            b = b.tcp_options(vec![1; 4 * self.tcp_words]);
        }
        b.payload(self.payload.clone()).build()
    }

    /// Header length from the standard sizes, independent of the parser.
    fn expected_header_end(&self) -> usize {
        let eth = 14 + if self.vlan { 4 } else { 0 };
        let ip = if self.v6 { 40 } else { 20 + 4 * self.ip_words };
        let transport = if self.udp { 8 } else { 20 + 4 * self.tcp_words };
        eth + ip + transport
    }
}

prop_compose! {
    fn header()(
        v6 in any::<bool>(),
        udp in any::<bool>(),
        vlan in any::<bool>(),
        ip_words in 0usize..=10,
        tcp_words in 0usize..=10,
        payload in proptest::collection::vec(any::<u8>(), 0..40),
    ) -> Header {
        Header { v6, udp, vlan, ip_words, tcp_words, payload }
    }
}

fn assert_well_formed(map: &FieldSpanMap, len: usize) {
    assert!(map.header_end <= len);
    for pair in map.spans.windows(2) {
        assert!(pair[0].end() <= pair[1].offset, "{:?} overlaps {:?}", pair[0], pair[1]);
    }
    for s in &map.spans {
        assert!(s.length > 0);
        assert!(s.end() <= map.header_end, "{s:?} past header_end {}", map.header_end);
    }
    assert_eq!(map.spans.last().map_or(0, |s| s.end()), map.header_end);
}

/// Replays the block permutation with an identically seeded generator.
fn replay_shuffle(bytes: &[u8], map: &FieldSpanMap, seed: u64) -> Vec<u8> {
    let mut rng = rng_for(seed, &[1]);
    let mut order: Vec<usize> = (0..map.spans.len()).collect();
    if order.len() >= 2 {
        order.shuffle(&mut rng);
    }
    let blocks: Vec<u8> = order.iter().flat_map(|&i| bytes[map.spans[i].range()].to_vec()).collect();
    let mut out = bytes.to_vec();
    let slots: Vec<usize> = map.spans.iter().flat_map(|s| s.range()).collect();
    for (slot, byte) in slots.into_iter().zip(blocks) {
        out[slot] = byte;
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn full_headers_parse_to_standard_length(h in header()) {
        let bytes = h.build();
        let map = parse_fields(&bytes);
        assert_well_formed(&map, bytes.len());
        prop_assert_eq!(map.header_end, h.expected_header_end());
        prop_assert_eq!(&map.spans[0].name, &"eth.dst");
        let last = map.spans.last().unwrap().name;
        let want = match (h.udp, h.tcp_words) {
            (true, _) => "udp.checksum",
            (false, 0) => "tcp.urgent",
            (false, _) => "tcp.options",
        };
        prop_assert_eq!(last, want);
    }

    #[test]
    fn truncated_headers_give_a_prefix(h in header(), cut in 0usize..120) {
        let full = h.build();
        let bytes = &full[..cut.min(full.len())];
        let map = parse_fields(bytes);
        assert_well_formed(&map, bytes.len());
        let whole = parse_fields(&full);
        prop_assert!(map.spans.len() <= whole.spans.len());
        prop_assert_eq!(&map.spans[..], &whole.spans[..map.spans.len()]);
    }

    #[test]
    fn arbitrary_bytes_never_break_invariants(bytes in proptest::collection::vec(any::<u8>(), 0..160)) {
        let map = parse_fields(&bytes);
        assert_well_formed(&map, bytes.len());
        prop_assert_eq!(parse_fields(&bytes), map);
    }

    #[test]
    fn shuffle_matches_replay_and_preserves_content(h in header(), seed in any::<u64>()) {
        let bytes = h.build();
        let map = parse_packet_fields(&bytes, 0);
        let out = shuffle_fields(&bytes, &map, false, &mut rng_for(seed, &[1]));
        prop_assert_eq!(&out, &replay_shuffle(&bytes, &map, seed));
        prop_assert_eq!(out.len(), bytes.len());
        prop_assert_eq!(&out[map.header_end..], &bytes[map.header_end..]);

        let mut before: Vec<u8> = map.spans.iter().flat_map(|s| bytes[s.range()].to_vec()).collect();
        let mut after: Vec<u8> = map.spans.iter().flat_map(|s| out[s.range()].to_vec()).collect();
        before.sort_unstable();
        after.sort_unstable();
        prop_assert_eq!(before, after);
    }

    #[test]
    fn within_layer_shuffle_keeps_layers(h in header(), seed in any::<u64>()) {
        let bytes = h.build();
        let map = parse_packet_fields(&bytes, 0);
        let out = shuffle_fields(&bytes, &map, true, &mut rng_for(seed, &[2]));
        let mut layers: Vec<_> = map.spans.iter().map(|s| s.layer).collect();
        layers.dedup();
        for layer in layers {
            let region = |b: &[u8]| {
                let mut v: Vec<u8> = map.spans.iter().filter(|s| s.layer == layer).flat_map(|s| b[s.range()].to_vec()).collect();
                v.sort_unstable();
                v
            };
            prop_assert_eq!(region(&out), region(&bytes));
        }
    }
}

#[test]
fn single_span_packet_is_unchanged() {
    let bytes = [0u8; 6];
    let map = parse_fields(&bytes);
    assert_eq!(map.spans.len(), 1);
    for seed in 0..20 {
        assert_eq!(shuffle_fields(&bytes, &map, false, &mut rng_for(seed, &[])), bytes.to_vec());
    }
}

#[test]
fn minimal_tcp_and_udp_layouts() {
    let tcp = parse_fields(&PacketBuilder::tcp_v4().build());
    assert_eq!(tcp.header_end, 14 + 20 + 20);
    let udp = parse_fields(&PacketBuilder::udp_v4().build());
    assert_eq!(udp.header_end, 14 + 20 + 8);
    let last = udp.spans.last().unwrap();
    assert_eq!((last.name, last.offset, last.length), ("udp.checksum", 40, 2));
    let ttl = tcp.span("ip.ttl").unwrap();
    assert_eq!((ttl.offset, ttl.length), (22, 1));
}
