use proptest::collection::vec;
use proptest::option;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mqttg::codec::{
    decode_packet, encode_packet, frame_len, ConnAck, Connect, ConnectReturnCode, GeolocationBlock,
    Mode, Packet, PacketType, Publish, QoS, SubAck, Subscribe, SubscribeReturnCode, Unsubscribe,
    Will, GEOLOCATION_BLOCK_LEN,
};

fn qos() -> impl Strategy<Value = QoS> {
    prop_oneof![
        Just(QoS::AtMostOnce),
        Just(QoS::AtLeastOnce),
        Just(QoS::ExactlyOnce)
    ]
}

fn geo() -> impl Strategy<Value = GeolocationBlock> {
    (
        any::<u8>(),
        -90.0..=90.0f64,
        -180.0..=180.0f64,
        -1.0e4..1.0e4f32,
    )
        .prop_map(
            |(version, latitude, longitude, elevation)| GeolocationBlock {
                version,
                latitude,
                longitude,
                elevation,
            },
        )
}

fn text() -> impl Strategy<Value = String> {
    "[a-zA-Z0-9 ._ü€-]{0,24}"
}

fn topic() -> impl Strategy<Value = String> {
    "[a-z0-9$]{1,6}(/[a-z0-9é]{0,6}){0,4}"
}

fn filter() -> impl Strategy<Value = String> {
    prop_oneof![
        topic(),
        Just("#".to_string()),
        "[a-z]{1,4}/\\+/[a-z]{1,4}",
        "[a-z]{1,4}/#"
    ]
}

fn id() -> impl Strategy<Value = u16> {
    1..=u16::MAX
}

fn payload() -> impl Strategy<Value = Vec<u8>> {
    vec(any::<u8>(), 0..=1024)
}

fn connect() -> impl Strategy<Value = Connect> {
    let will = (topic(), vec(any::<u8>(), 0..64), qos(), any::<bool>()).prop_map(
        |(topic, message, qos, retain)| Will {
            topic,
            message,
            qos,
            retain,
        },
    );
    (
        text(),
        any::<u16>(),
        any::<bool>(),
        option::of(will),
        option::of((text(), option::of(vec(any::<u8>(), 0..32)))),
        option::of(geo()),
    )
        .prop_map(|(client_id, keep_alive, clean, will, creds, geolocation)| {
            let (username, password) = match creds {
                Some((u, p)) => (Some(u), p),
                None => (None, None),
            };
            Connect {
                will,
                username,
                password,
                geolocation,
                ..Connect::new(client_id, keep_alive, clean)
            }
        })
}

fn publish() -> impl Strategy<Value = Publish> {
    (
        qos(),
        any::<bool>(),
        any::<bool>(),
        topic(),
        id(),
        option::of(geo()),
        payload(),
    )
        .prop_map(|(qos, dup, retain, topic, id, geolocation, payload)| {
            let qos0 = qos == QoS::AtMostOnce;
            Publish {
                dup: dup && !qos0,
                qos,
                retain,
                topic,
                packet_id: (!qos0).then_some(id),
                geolocation,
                payload,
            }
        })
}

fn return_code() -> impl Strategy<Value = SubscribeReturnCode> {
    prop_oneof![
        qos().prop_map(SubscribeReturnCode::Success),
        Just(SubscribeReturnCode::Failure)
    ]
}

fn connack() -> impl Strategy<Value = ConnAck> {
    (any::<bool>(), 0u8..=5).prop_map(|(session_present, code)| ConnAck {
        session_present,
        return_code: ConnectReturnCode::from_u8(code).unwrap(),
    })
}

/// Every packet type, with and without geolocation where eligible.
fn packet() -> impl Strategy<Value = Packet> {
    let g = || option::of(geo());
    prop_oneof![
        connect().prop_map(Packet::Connect),
        connack().prop_map(Packet::ConnAck),
        publish().prop_map(Packet::Publish),
        (id(), g()).prop_map(|(packet_id, geolocation)| Packet::PubAck {
            packet_id,
            geolocation
        }),
        (id(), g()).prop_map(|(packet_id, geolocation)| Packet::PubRec {
            packet_id,
            geolocation
        }),
        (id(), g()).prop_map(|(packet_id, geolocation)| Packet::PubRel {
            packet_id,
            geolocation
        }),
        (id(), g()).prop_map(|(packet_id, geolocation)| Packet::PubComp {
            packet_id,
            geolocation
        }),
        (id(), vec((filter(), qos()), 1..5), g()).prop_map(|(packet_id, filters, geolocation)| {
            Packet::Subscribe(Subscribe {
                packet_id,
                filters,
                geolocation,
            })
        }),
        (id(), vec(return_code(), 1..5)).prop_map(|(packet_id, return_codes)| {
            Packet::SubAck(SubAck {
                packet_id,
                return_codes,
            })
        }),
        (id(), vec(filter(), 1..5), g()).prop_map(|(packet_id, filters, geolocation)| {
            Packet::Unsubscribe(Unsubscribe {
                packet_id,
                filters,
                geolocation,
            })
        }),
        id().prop_map(|packet_id| Packet::UnsubAck { packet_id }),
        g().prop_map(|geolocation| Packet::PingReq { geolocation }),
        Just(Packet::PingResp),
        g().prop_map(|geolocation| Packet::Disconnect { geolocation }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn round_trip(p in packet()) {
        let bytes = encode_packet(&p).unwrap();
        prop_assert_eq!(frame_len(&bytes).unwrap(), Some(bytes.len()));
        let (back, used) = decode_packet(&bytes, Mode::Extended).unwrap();
        prop_assert_eq!(used, bytes.len());
        prop_assert_eq!(&back, &p);
    }

    #[test]
    fn geolocation_adds_exactly_one_block(p in packet(), g in geo()) {
        let mut plain = p.without_geolocation();
        let legacy = encode_packet(&plain).unwrap();
        let Some(slot) = plain.geolocation_slot() else {
            prop_assert!(!plain.packet_type().is_geo_eligible());
            return Ok(());
        };
        *slot = Some(g);
        let extended = encode_packet(&plain).unwrap();
        let remaining = |b: &[u8]| b.len() - 1 - mbi_len_of(b);
        prop_assert_eq!(remaining(&extended), remaining(&legacy) + GEOLOCATION_BLOCK_LEN);
        match plain.packet_type() {
            PacketType::PublishG => prop_assert_eq!(extended[0] >> 4, 0xF),
            _ => {
                prop_assert_eq!(extended[0] >> 4, legacy[0] >> 4);
                prop_assert_eq!(extended[0], legacy[0] | 0x08);
            }
        }
    }

    #[test]
    fn legacy_encodings_pass_strict_mode(p in packet()) {
        let plain = p.without_geolocation();
        let bytes = encode_packet(&plain).unwrap();
        let (back, _) = decode_packet(&bytes, Mode::Strict311).unwrap();
        prop_assert_eq!(back, plain);
    }

    #[test]
    fn geo_packets_rejected_in_strict_mode(p in packet(), g in geo()) {
        let mut p = p;
        if let Some(slot) = p.geolocation_slot() {
            *slot = Some(g);
            let bytes = encode_packet(&p).unwrap();
            prop_assert!(decode_packet(&bytes, Mode::Strict311).is_err());
        }
    }

    #[test]
    fn arbitrary_bytes_never_panic(bytes in vec(any::<u8>(), 0..300)) {
        for mode in [Mode::Strict311, Mode::Extended, Mode::Permissive] {
            if let Ok((p, used)) = decode_packet(&bytes, mode) {
                prop_assert!(used <= bytes.len());
                // anything that decodes must re-encode to the same frame,
                // unless it carries non-finite geolocation (permissive only)
                if mode != Mode::Permissive {
                    prop_assert_eq!(encode_packet(&p).unwrap(), bytes[..used].to_vec());
                }
            }
        }
    }
}

/// Length of the remaining-length field of an encoded frame.
fn mbi_len_of(frame: &[u8]) -> usize {
    frame[1..].iter().position(|b| b & 0x80 == 0).unwrap() + 1
}

#[test]
fn pingreq_and_disconnect_overhead_is_exactly_21() {
    let g = Some(GeolocationBlock::new(49.8483, -99.9501, 409.0));
    for (plain, with) in [
        (
            Packet::PingReq { geolocation: None },
            Packet::PingReq { geolocation: g },
        ),
        (
            Packet::Disconnect { geolocation: None },
            Packet::Disconnect { geolocation: g },
        ),
    ] {
        let a = encode_packet(&plain).unwrap();
        let b = encode_packet(&with).unwrap();
        assert_eq!(b.len(), a.len() + 21);
        assert_eq!(b[1], 21);
    }
}

#[test]
fn seeded_fuzz_of_mutated_frames() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let seeds: Vec<Vec<u8>> = [
        Packet::Connect(Connect::new("fuzz", 30, true)),
        Packet::Publish(Publish {
            qos: QoS::ExactlyOnce,
            packet_id: Some(4),
            geolocation: Some(GeolocationBlock::new(1.0, 2.0, 3.0)),
            ..Publish::new("a/b", b"payload".to_vec())
        }),
        Packet::PingReq {
            geolocation: Some(GeolocationBlock::new(1.0, 2.0, 3.0)),
        },
        Packet::Subscribe(Subscribe {
            packet_id: 1,
            filters: vec![("a/#".into(), QoS::AtLeastOnce)],
            geolocation: None,
        }),
    ]
    .iter()
    .map(|p| encode_packet(p).unwrap())
    .collect();
    for _ in 0..20_000 {
        let mut bytes = seeds[rng.random_range(0..seeds.len())].clone();
        for _ in 0..rng.random_range(1..4) {
            match rng.random_range(0..3) {
                0 if !bytes.is_empty() => {
                    let i = rng.random_range(0..bytes.len());
                    bytes[i] = rng.random();
                }
                1 if !bytes.is_empty() => {
                    let at = rng.random_range(0..bytes.len());
                    bytes.truncate(at);
                }
                _ => bytes.push(rng.random()),
            }
        }
        for mode in [Mode::Strict311, Mode::Extended, Mode::Permissive] {
            let _ = decode_packet(&bytes, mode);
            let _ = frame_len(&bytes);
        }
    }
}
