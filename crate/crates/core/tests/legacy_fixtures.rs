//! Hand-framed MQTT 3.1.1 packets. Each fixture must decode to the listed
//! packet and re-encode to the same bytes, in every codec mode.

use std::path::PathBuf;

use mqttg::codec::{
    decode_packet, encode_packet, frame_len, ConnAck, Connect, ConnectReturnCode, Mode, Packet,
    Publish, QoS, SubAck, Subscribe, SubscribeReturnCode, Unsubscribe, Will,
};

fn load(name: &str) -> Vec<u8> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(format!("{name}.hex"));
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{path:?}: {e}"));
    let digits: String = text
        .lines()
        .filter(|l| !l.trim_start().starts_with('#'))
        .flat_map(|l| l.split_whitespace())
        .collect();
    hex::decode(digits).unwrap()
}

fn publish(topic: &str, qos: QoS, id: Option<u16>, payload: &[u8]) -> Publish {
    Publish {
        qos,
        packet_id: id,
        ..Publish::new(topic, payload.to_vec())
    }
}

fn table() -> Vec<(&'static str, Packet)> {
    vec![
        (
            "connect_minimal_clean",
            Packet::Connect(Connect::new("a", 60, true)),
        ),
        (
            "connect_will_qos1_retain_user_pass",
            Packet::Connect(Connect {
                will: Some(Will {
                    topic: "w".into(),
                    message: b"bye".to_vec(),
                    qos: QoS::AtLeastOnce,
                    retain: true,
                }),
                username: Some("u".into()),
                password: Some(b"p".to_vec()),
                ..Connect::new("c1", 10, true)
            }),
        ),
        (
            "connect_empty_id",
            Packet::Connect(Connect::new("", 60, true)),
        ),
        (
            "connect_persistent_username_only",
            Packet::Connect(Connect {
                username: Some("bob".into()),
                ..Connect::new("dev", 0, false)
            }),
        ),
        (
            "connack_accepted",
            Packet::ConnAck(ConnAck {
                session_present: false,
                return_code: ConnectReturnCode::Accepted,
            }),
        ),
        (
            "connack_session_present",
            Packet::ConnAck(ConnAck {
                session_present: true,
                return_code: ConnectReturnCode::Accepted,
            }),
        ),
        (
            "connack_identifier_rejected",
            Packet::ConnAck(ConnAck {
                session_present: false,
                return_code: ConnectReturnCode::IdentifierRejected,
            }),
        ),
        (
            "publish_qos0",
            Packet::Publish(publish("a/b", QoS::AtMostOnce, None, b"hi")),
        ),
        (
            "publish_qos0_empty_payload",
            Packet::Publish(publish("t", QoS::AtMostOnce, None, b"")),
        ),
        (
            "publish_qos1_retain",
            Packet::Publish(Publish {
                retain: true,
                ..publish("t", QoS::AtLeastOnce, Some(10), b"x")
            }),
        ),
        (
            "publish_qos2_dup_empty_payload",
            Packet::Publish(Publish {
                dup: true,
                ..publish("t", QoS::ExactlyOnce, Some(1), b"")
            }),
        ),
        (
            "publish_two_byte_remaining_length",
            Packet::Publish(publish("t", QoS::AtMostOnce, None, &[0x41; 200])),
        ),
        ("puback", Packet::pub_ack(10)),
        ("pubrec", Packet::pub_rec(11)),
        ("pubrel", Packet::pub_rel(11)),
        ("pubcomp", Packet::pub_comp(11)),
        (
            "subscribe_single_qos1",
            Packet::Subscribe(Subscribe {
                packet_id: 1,
                filters: vec![("t".into(), QoS::AtLeastOnce)],
                geolocation: None,
            }),
        ),
        (
            "subscribe_wildcards_multi",
            Packet::Subscribe(Subscribe {
                packet_id: 2,
                filters: vec![
                    ("a/+".into(), QoS::AtMostOnce),
                    ("#".into(), QoS::ExactlyOnce),
                ],
                geolocation: None,
            }),
        ),
        (
            "suback_mixed",
            Packet::SubAck(SubAck {
                packet_id: 2,
                return_codes: vec![
                    SubscribeReturnCode::Success(QoS::AtMostOnce),
                    SubscribeReturnCode::Success(QoS::ExactlyOnce),
                    SubscribeReturnCode::Failure,
                ],
            }),
        ),
        (
            "unsubscribe_single",
            Packet::Unsubscribe(Unsubscribe {
                packet_id: 3,
                filters: vec!["a/+".into()],
                geolocation: None,
            }),
        ),
        ("unsuback", Packet::UnsubAck { packet_id: 3 }),
        ("pingreq", Packet::PingReq { geolocation: None }),
        ("pingresp", Packet::PingResp),
        ("disconnect", Packet::Disconnect { geolocation: None }),
    ]
}

#[test]
fn every_fixture_file_is_in_the_table() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    let mut files: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "hex"))
        .map(|p| p.file_stem().unwrap().to_string_lossy().into_owned())
        .collect();
    files.sort();
    let mut names: Vec<String> = table().iter().map(|(n, _)| n.to_string()).collect();
    names.sort();
    assert_eq!(files, names);
    assert!(names.len() >= 20);
}

#[test]
fn fixtures_round_trip_byte_identically() {
    for (name, expected) in table() {
        let bytes = load(name);
        assert_eq!(encode_packet(&expected).unwrap(), bytes, "{name}: encode");
        assert_eq!(
            frame_len(&bytes).unwrap(),
            Some(bytes.len()),
            "{name}: frame_len"
        );
        for mode in [Mode::Strict311, Mode::Extended, Mode::Permissive] {
            let (decoded, used) =
                decode_packet(&bytes, mode).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(decoded, expected, "{name}: decode {mode:?}");
            assert_eq!(used, bytes.len());
        }
    }
}

#[test]
fn fixture_prefixes_are_truncated() {
    for (name, _) in table() {
        let bytes = load(name);
        for cut in 0..bytes.len() {
            assert!(
                decode_packet(&bytes[..cut], Mode::Extended).is_err(),
                "{name}: prefix of {cut} bytes decoded"
            );
        }
    }
}
