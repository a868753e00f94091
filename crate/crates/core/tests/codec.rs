use canary::codec::{decode, encode, encoded_len, from_hex_dump, to_hex_dump, CanaryPacket, CodecError, HEADER_BYTES};
use proptest::prelude::*;

fn fixture(name: &str) -> Vec<u8> {
    let path = format!("{}/tests/fixtures/{name}", env!("CARGO_MANIFEST_DIR"));
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{path}: {e}"));
    from_hex_dump(&text).expect("valid hex dump")
}

#[test]
fn reduce_fixture() {
    let p = CanaryPacket {
        destination: 0x0a00_0001,
        id: 0x0100_0007,
        counter: 1,
        hosts: 15,
        data: vec![1, -1, i32::MAX, i32::MIN],
        ..CanaryPacket::default()
    };
    let bytes = fixture("reduce_e4.hex");
    assert_eq!(encode(&p, 4).unwrap(), bytes);
    assert_eq!(decode(&bytes, 4).unwrap(), p);
}

#[test]
fn bypass_fixture() {
    let p = CanaryPacket {
        destination: 5,
        id: 0x0200_0100,
        counter: 3,
        hosts: 31,
        children: 9,
        switch_address: 0x0102,
        bypass: true,
        multicast: false,
        data: vec![100, -200],
    };
    let bytes = fixture("bypass_e2.hex");
    assert_eq!(encode(&p, 2).unwrap(), bytes);
    assert_eq!(decode(&bytes, 2).unwrap(), p);
}

#[test]
fn broadcast_fixture_is_147_bytes() {
    let p = CanaryPacket {
        destination: 0x2a,
        id: 0x00ab_cdef,
        counter: 31,
        hosts: 31,
        multicast: true,
        data: (0..32).map(|i| i * 1000 - 16000).collect(),
        ..CanaryPacket::default()
    };
    let bytes = fixture("broadcast_e32.hex");
    assert_eq!(bytes.len(), 147);
    assert_eq!(encode(&p, 32).unwrap(), bytes);
    assert_eq!(decode(&bytes, 32).unwrap(), p);
}

#[test]
fn restoration_fixture() {
    let p = CanaryPacket {
        destination: 0x8001_0102,
        id: 0x0100_0009,
        counter: 7,
        hosts: 7,
        children: 5,
        switch_address: 0x0102,
        bypass: true,
        multicast: false,
        data: vec![42],
    };
    let bytes = fixture("restoration_e1.hex");
    assert_eq!(encode(&p, 1).unwrap(), bytes);
    assert_eq!(decode(&bytes, 1).unwrap(), p);
    assert_eq!(from_hex_dump(&to_hex_dump(&bytes)).unwrap(), bytes);
}

#[test]
fn wire_sizes() {
    assert_eq!(HEADER_BYTES, 19);
    assert_eq!(encoded_len(32), 147);
    assert_eq!(encoded_len(256), 1043);
}

fn packet(max_elements: usize) -> impl Strategy<Value = (CanaryPacket, usize)> {
    (
        any::<u32>(),
        any::<u32>(),
        any::<u16>(),
        any::<u16>(),
        any::<u32>(),
        any::<u16>(),
        0u8..3,
        prop::collection::vec(any::<i32>(), 0..=max_elements),
    )
        .prop_map(|(destination, id, counter, hosts, children, switch_address, flags, data)| {
            let e = data.len();
            let p = CanaryPacket {
                destination,
                id,
                counter,
                hosts,
                children,
                switch_address,
                bypass: flags == 1,
                multicast: flags == 2,
                data,
            };
            (p, e)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100_000))]

    #[test]
    fn round_trip((p, e) in packet(40)) {
        let bytes = encode(&p, e).unwrap();
        prop_assert_eq!(bytes.len() - 4 * e, HEADER_BYTES);
        prop_assert_eq!(decode(&bytes, e).unwrap(), p);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2_000))]

    #[test]
    fn field_isolation((p, e) in packet(8), field in 0usize..8, salt in any::<u32>()) {
        let base = encode(&p, e).unwrap();
        let mut q = p.clone();
        let range = match field {
            0 => { q.destination ^= salt | 1; 0..4 }
            1 => { q.id ^= salt | 1; 4..8 }
            2 => { q.counter ^= (salt as u16) | 1; 8..10 }
            3 => { q.hosts ^= (salt as u16) | 1; 10..12 }
            4 => { q.children ^= salt | 1; 12..16 }
            5 => { q.switch_address ^= (salt as u16) | 1; 16..18 }
            6 => {
                // toggle between reduce and one of the flagged kinds
                if q.bypass || q.multicast { q.bypass = false; q.multicast = false; } else { q.bypass = true; }
                18..19
            }
            _ => {
                if e == 0 { return Ok(()); }
                let i = salt as usize % e;
                q.data[i] ^= (salt as i32) | 1;
                HEADER_BYTES + 4 * i..HEADER_BYTES + 4 * i + 4
            }
        };
        let changed = encode(&q, e).unwrap();
        for i in 0..base.len() {
            if !range.contains(&i) {
                prop_assert_eq!(base[i], changed[i], "byte {} outside {:?} changed", i, range);
            }
        }
        prop_assert_ne!(&base[range.clone()], &changed[range]);
    }

    #[test]
    fn bad_lengths_are_rejected((p, e) in packet(8), extra in 1usize..5) {
        let mut bytes = encode(&p, e).unwrap();
        bytes.extend(std::iter::repeat_n(0, extra));
        let rejected = matches!(decode(&bytes, e), Err(CodecError::BufferLength { .. }));
        prop_assert!(rejected);
        prop_assert!(encode(&p, e + extra).is_err());
    }
}
