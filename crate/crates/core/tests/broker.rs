use std::time::Duration;

use mqttg::broker::{Broker, BrokerConfig, ConnectionId, Effect, UnknownLocationPolicy, Verdict};
use mqttg::codec::{
    Connect, ConnectReturnCode, GeolocationBlock, Packet, Publish, QoS, Subscribe,
    SubscribeReturnCode, Unsubscribe, Will,
};
use mqttg::geometry::FenceMode;
use mqttg::sysg;
use mqttg::{GeoPoint, Geofence, Timestamp};

fn at(ms: u64) -> Timestamp {
    Timestamp::from_millis(ms)
}

fn geo(lat: f64, lon: f64) -> GeolocationBlock {
    GeolocationBlock::new(lat, lon, 0.0)
}

fn square(lat: f64, lon: f64, half: f64) -> Geofence {
    Geofence::new(
        FenceMode::Static,
        vec![
            GeoPoint::new(lat - half, lon - half),
            GeoPoint::new(lat - half, lon + half),
            GeoPoint::new(lat + half, lon + half),
            GeoPoint::new(lat + half, lon - half),
        ],
    )
}

struct Net {
    broker: Broker,
    next: u64,
}

impl Net {
    fn new() -> Self {
        Self::with(BrokerConfig::default())
    }

    fn with(config: BrokerConfig) -> Self {
        Net {
            broker: Broker::new(config),
            next: 0,
        }
    }

    fn connect_with(&mut self, c: Connect) -> (ConnectionId, Vec<Effect>) {
        self.next += 1;
        let conn = ConnectionId(self.next);
        self.broker.connection_opened(conn, Timestamp::ZERO);
        let fx = self
            .broker
            .handle_inbound(conn, Packet::Connect(c), Timestamp::ZERO);
        (conn, fx)
    }

    fn connect(&mut self, id: &str) -> ConnectionId {
        let (conn, fx) = self.connect_with(Connect::new(id, 60, true));
        assert!(matches!(
            &fx[0],
            Effect::Send { packet: Packet::ConnAck(a), .. } if a.return_code == ConnectReturnCode::Accepted
        ));
        conn
    }

    fn send(&mut self, conn: ConnectionId, p: Packet) -> Vec<Effect> {
        self.broker.handle_inbound(conn, p, Timestamp::ZERO)
    }

    fn subscribe(&mut self, conn: ConnectionId, filter: &str, qos: QoS) -> Vec<Effect> {
        self.send(
            conn,
            Packet::Subscribe(Subscribe {
                packet_id: 1,
                filters: vec![(filter.into(), qos)],
                geolocation: None,
            }),
        )
    }

    fn set_fence(&mut self, conn: ConnectionId, f: &Geofence) -> Vec<Effect> {
        let mut p = Publish::new(sysg::FENCE_SET_TOPIC, sysg::encode_fence(f).unwrap());
        p.qos = QoS::AtLeastOnce;
        p.packet_id = Some(100);
        self.send(conn, Packet::Publish(p))
    }
}

fn sent_to(fx: &[Effect], conn: ConnectionId) -> Vec<Packet> {
    fx.iter()
        .filter_map(|e| match e {
            Effect::Send { conn: c, packet } if *c == conn => Some(packet.clone()),
            _ => None,
        })
        .collect()
}

fn routes(fx: &[Effect]) -> Vec<(String, Verdict)> {
    fx.iter()
        .filter_map(|e| match e {
            Effect::Route(r) => Some((r.subscriber.clone(), r.verdict)),
            _ => None,
        })
        .collect()
}

fn publishes(fx: &[Effect], conn: ConnectionId) -> Vec<Publish> {
    sent_to(fx, conn)
        .into_iter()
        .filter_map(|p| match p {
            Packet::Publish(p) => Some(p),
            _ => None,
        })
        .collect()
}

#[test]
fn pingreq_with_geolocation_updates_location() {
    let mut n = Net::new();
    let c = n.connect("a");
    let fx = n.send(
        c,
        Packet::PingReq {
            geolocation: Some(geo(1.0, 2.0)),
        },
    );
    assert_eq!(sent_to(&fx, c), vec![Packet::PingResp]);
    let s = n.broker.session("a").unwrap();
    assert_eq!(s.last_location.unwrap().block, geo(1.0, 2.0));
    assert!(s.geo_capable);

    let fx = n.send(c, Packet::PingReq { geolocation: None });
    assert_eq!(sent_to(&fx, c), vec![Packet::PingResp]);
    assert_eq!(
        n.broker.session("a").unwrap().last_location.unwrap().block,
        geo(1.0, 2.0)
    );
}

#[test]
fn legacy_client_never_geo_capable() {
    let mut n = Net::new();
    let c = n.connect("a");
    n.send(c, Packet::PingReq { geolocation: None });
    let s = n.broker.session("a").unwrap();
    assert!(!s.geo_capable);
    assert!(s.last_location.is_none());
}

#[test]
fn connect_with_geolocation_sets_location() {
    let mut n = Net::new();
    let mut c = Connect::new("a", 30, true);
    c.geolocation = Some(geo(3.0, 4.0));
    n.connect_with(c);
    assert_eq!(
        n.broker.session("a").unwrap().last_location.unwrap().block,
        geo(3.0, 4.0)
    );
}

#[test]
fn publishg_qos1_acks_and_routes() {
    let mut n = Net::new();
    let p = n.connect("p");
    let geo_sub = n.connect("g");
    let legacy_sub = n.connect("l");
    n.send(
        geo_sub,
        Packet::PingReq {
            geolocation: Some(geo(0.0, 0.0)),
        },
    );
    n.subscribe(geo_sub, "t/+", QoS::AtLeastOnce);
    n.subscribe(legacy_sub, "t/#", QoS::AtMostOnce);

    let mut msg = Publish::new("t/x", b"hello".to_vec());
    msg.qos = QoS::AtLeastOnce;
    msg.packet_id = Some(7);
    msg.geolocation = Some(geo(1.0, 1.0));
    let fx = n.send(p, Packet::Publish(msg));

    assert_eq!(sent_to(&fx, p), vec![Packet::pub_ack(7)]);
    let to_geo = publishes(&fx, geo_sub);
    assert_eq!(to_geo.len(), 1);
    assert_eq!(to_geo[0].qos, QoS::AtLeastOnce);
    assert_eq!(to_geo[0].geolocation, Some(geo(1.0, 1.0)));
    assert!(to_geo[0].packet_id.is_some());

    let to_legacy = publishes(&fx, legacy_sub);
    assert_eq!(to_legacy.len(), 1);
    assert_eq!(
        to_legacy[0].qos,
        QoS::AtMostOnce,
        "downgraded to subscription QoS"
    );
    assert_eq!(
        to_legacy[0].geolocation, None,
        "stripped for legacy subscriber"
    );
    assert_eq!(to_legacy[0].packet_id, None);

    assert_eq!(
        routes(&fx),
        vec![
            ("g".into(), Verdict::Forwarded),
            ("l".into(), Verdict::Forwarded)
        ]
    );
    assert_eq!(
        n.broker.session("p").unwrap().last_location.unwrap().block,
        geo(1.0, 1.0)
    );
}

#[test]
fn subscriber_fence_filters() {
    let mut n = Net::new();
    let inside = n.connect("in");
    let outside = n.connect("out");
    let sub = n.connect("sub");
    n.set_fence(sub, &square(10.0, 10.0, 1.0));
    n.subscribe(sub, "x", QoS::AtMostOnce);

    let mut m = Publish::new("x", b"1".to_vec());
    m.geolocation = Some(geo(10.5, 10.5));
    let fx = n.send(inside, Packet::Publish(m.clone()));
    assert_eq!(routes(&fx), vec![("sub".into(), Verdict::Forwarded)]);
    assert_eq!(publishes(&fx, sub).len(), 1);

    m.geolocation = Some(geo(20.0, 20.0));
    let fx = n.send(outside, Packet::Publish(m));
    assert_eq!(
        routes(&fx),
        vec![("sub".into(), Verdict::SuppressedBySubscriberFence)]
    );
    assert!(publishes(&fx, sub).is_empty());
}

#[test]
fn publisher_fence_uses_subscriber_location() {
    let mut n = Net::new();
    let p = n.connect("p");
    let near = n.connect("near");
    let far = n.connect("far");
    n.send(
        p,
        Packet::PingReq {
            geolocation: Some(geo(5.0, 5.0)),
        },
    );
    let dynamic = Geofence::new(
        FenceMode::Dynamic,
        vec![
            GeoPoint::new(-1.0, -1.0),
            GeoPoint::new(-1.0, 1.0),
            GeoPoint::new(1.0, 1.0),
            GeoPoint::new(1.0, -1.0),
        ],
    );
    let fx = n.set_fence(p, &dynamic);
    assert!(!fx.iter().any(|e| matches!(e, Effect::SysgRejected { .. })));
    n.send(
        near,
        Packet::PingReq {
            geolocation: Some(geo(5.5, 4.5)),
        },
    );
    n.send(
        far,
        Packet::PingReq {
            geolocation: Some(geo(7.0, 5.0)),
        },
    );
    n.subscribe(near, "x", QoS::AtMostOnce);
    n.subscribe(far, "x", QoS::AtMostOnce);

    let fx = n.send(p, Packet::Publish(Publish::new("x", b"1".to_vec())));
    assert_eq!(
        routes(&fx),
        vec![
            ("far".into(), Verdict::SuppressedByPublisherFence),
            ("near".into(), Verdict::Forwarded)
        ]
    );

    // the fence moves with its owner
    n.send(
        p,
        Packet::PingReq {
            geolocation: Some(geo(7.0, 5.0)),
        },
    );
    let fx = n.send(p, Packet::Publish(Publish::new("x", b"2".to_vec())));
    assert_eq!(
        routes(&fx),
        vec![
            ("far".into(), Verdict::Forwarded),
            ("near".into(), Verdict::SuppressedByPublisherFence)
        ]
    );
}

#[test]
fn unknown_location_policy() {
    for (policy, expected) in [
        (UnknownLocationPolicy::FailOpen, Verdict::Forwarded),
        (
            UnknownLocationPolicy::FailClosed,
            Verdict::SuppressedBySubscriberFence,
        ),
    ] {
        let mut n = Net::with(BrokerConfig {
            unknown_location: policy,
            ..BrokerConfig::default()
        });
        let p = n.connect("p");
        let s = n.connect("s");
        n.set_fence(s, &square(0.0, 0.0, 1.0));
        n.subscribe(s, "x", QoS::AtMostOnce);
        let fx = n.send(p, Packet::Publish(Publish::new("x", vec![])));
        assert_eq!(routes(&fx), vec![("s".into(), expected)], "{policy:?}");
    }
}

#[test]
fn sysg_set_clear_and_reject() {
    let mut n = Net::new();
    let c = n.connect("c");
    let fx = n.set_fence(c, &square(0.0, 0.0, 1.0));
    assert_eq!(sent_to(&fx, c), vec![Packet::pub_ack(100)]);
    assert!(n.broker.session("c").unwrap().fence.is_some());
    assert!(n.broker.session("c").unwrap().geo_capable);

    // two vertices: rejected, fence unchanged
    let mut bad = vec![1u8, 0, 2, 0];
    bad.extend([0u8; 32]);
    let fx = n.send(c, Packet::Publish(Publish::new(sysg::FENCE_SET_TOPIC, bad)));
    assert!(fx.iter().any(|e| matches!(e, Effect::SysgRejected { .. })));
    assert_eq!(
        n.broker.session("c").unwrap().fence,
        Some(square(0.0, 0.0, 1.0))
    );

    n.send(
        c,
        Packet::Publish(Publish::new(sysg::FENCE_CLEAR_TOPIC, vec![])),
    );
    assert!(n.broker.session("c").unwrap().fence.is_none());
    let fx = n.send(
        c,
        Packet::Publish(Publish::new(sysg::FENCE_CLEAR_TOPIC, vec![])),
    );
    assert!(fx.is_empty(), "idempotent clear");
}

#[test]
fn sysg_never_routed() {
    let mut n = Net::new();
    let c = n.connect("c");
    let all = n.connect("all");
    n.subscribe(all, "#", QoS::ExactlyOnce);
    n.subscribe(all, "$SYSg/#", QoS::ExactlyOnce);
    let mut fx = n.set_fence(c, &square(0.0, 0.0, 1.0));
    let mut retained = Publish::new(sysg::FENCE_CLEAR_TOPIC, vec![]);
    retained.retain = true;
    fx.extend(n.send(c, Packet::Publish(retained)));
    assert!(routes(&fx).is_empty());
    assert!(publishes(&fx, all).is_empty());
    assert!(n.broker.retained(sysg::FENCE_CLEAR_TOPIC).is_none());
}

#[test]
fn retained_replay() {
    let mut n = Net::new();
    let p = n.connect("p");
    let mut m = Publish::new("a/b", b"kept".to_vec());
    m.retain = true;
    m.qos = QoS::AtLeastOnce;
    m.packet_id = Some(1);
    m.geolocation = Some(geo(50.0, 50.0));
    n.send(p, Packet::Publish(m));

    let s = n.connect("s");
    let fx = n.subscribe(s, "a/+", QoS::AtMostOnce);
    let got = publishes(&fx, s);
    assert_eq!(got.len(), 1);
    assert!(got[0].retain);
    assert_eq!(got[0].payload, b"kept");
    assert!(
        matches!(sent_to(&fx, s)[0], Packet::SubAck(_)),
        "SUBACK precedes replay"
    );

    let fenced = n.connect("f");
    n.set_fence(fenced, &square(0.0, 0.0, 1.0));
    let fx = n.subscribe(fenced, "a/#", QoS::AtMostOnce);
    assert!(publishes(&fx, fenced).is_empty());
    assert_eq!(
        routes(&fx),
        vec![("f".into(), Verdict::SuppressedBySubscriberFence)]
    );

    let none = n.connect("n");
    assert!(publishes(&n.subscribe(none, "zzz", QoS::AtMostOnce), none).is_empty());

    // empty retained payload clears
    let mut clear = Publish::new("a/b", vec![]);
    clear.retain = true;
    n.send(p, Packet::Publish(clear));
    assert!(n.broker.retained("a/b").is_none());
}

#[test]
fn qos2_inbound_routed_once() {
    let mut n = Net::new();
    let p = n.connect("p");
    let s = n.connect("s");
    n.subscribe(s, "q", QoS::ExactlyOnce);
    let mut m = Publish::new("q", b"x".to_vec());
    m.qos = QoS::ExactlyOnce;
    m.packet_id = Some(9);
    let first = n.send(p, Packet::Publish(m.clone()));
    m.dup = true;
    let dup = n.send(p, Packet::Publish(m.clone()));
    assert_eq!(sent_to(&first, p), vec![Packet::pub_rec(9)]);
    assert_eq!(sent_to(&dup, p), vec![Packet::pub_rec(9)]);
    assert_eq!(publishes(&first, s).len(), 1);
    assert!(publishes(&dup, s).is_empty());
    assert_eq!(
        sent_to(&n.send(p, Packet::pub_rel(9)), p),
        vec![Packet::pub_comp(9)]
    );

    // identifier reusable after PUBREL
    m.dup = false;
    let again = n.send(p, Packet::Publish(m));
    assert_eq!(publishes(&again, s).len(), 1);
}

#[test]
fn outbound_qos2_flow() {
    let mut n = Net::new();
    let p = n.connect("p");
    let s = n.connect("s");
    n.subscribe(s, "q", QoS::ExactlyOnce);
    let mut m = Publish::new("q", b"x".to_vec());
    m.qos = QoS::ExactlyOnce;
    m.packet_id = Some(1);
    let fx = n.send(p, Packet::Publish(m));
    let id = publishes(&fx, s)[0].packet_id.unwrap();
    assert_eq!(
        sent_to(&n.send(s, Packet::pub_rec(id)), s),
        vec![Packet::pub_rel(id)]
    );
    let fx = n.send(s, Packet::pub_comp(id));
    assert!(fx.is_empty());
    assert_eq!(n.broker.session("s").unwrap().inflight_count(), 0);
    let fx = n.send(s, Packet::pub_comp(id));
    assert!(matches!(fx[..], [Effect::Warning { .. }]));
}

#[test]
fn qos1_retransmits_with_dup() {
    let mut n = Net::new();
    let p = n.connect("p");
    let s = n.connect("s");
    n.subscribe(s, "q", QoS::AtLeastOnce);
    let mut m = Publish::new("q", b"x".to_vec());
    m.qos = QoS::AtLeastOnce;
    m.packet_id = Some(1);
    let fx = n.send(p, Packet::Publish(m));
    let first = publishes(&fx, s)[0].clone();
    assert!(!first.dup);

    assert!(publishes(&n.broker.tick(at(4_999)), s).is_empty());
    let again = publishes(&n.broker.tick(at(5_000)), s);
    assert_eq!(again.len(), 1);
    assert!(again[0].dup);
    assert_eq!(again[0].packet_id, first.packet_id);

    n.send(s, Packet::pub_ack(first.packet_id.unwrap()));
    assert!(publishes(&n.broker.tick(at(20_000)), s).is_empty());
}

#[test]
fn retransmit_timeout_is_configurable() {
    let mut n = Net::with(BrokerConfig {
        retransmit_timeout: Duration::from_millis(200),
        ..BrokerConfig::default()
    });
    let p = n.connect("p");
    let s = n.connect("s");
    n.subscribe(s, "q", QoS::AtLeastOnce);
    let mut m = Publish::new("q", b"x".to_vec());
    m.qos = QoS::AtLeastOnce;
    m.packet_id = Some(1);
    n.send(p, Packet::Publish(m));
    assert_eq!(publishes(&n.broker.tick(at(200)), s).len(), 1);
}

#[test]
fn ack_for_unknown_id_warns() {
    let mut n = Net::new();
    let c = n.connect("c");
    let fx = n.send(c, Packet::pub_ack(42));
    assert!(matches!(fx[..], [Effect::Warning { .. }]));
}

#[test]
fn second_connect_closes() {
    let mut n = Net::new();
    let c = n.connect("c");
    let fx = n.send(c, Packet::Connect(Connect::new("c", 60, true)));
    assert!(fx
        .iter()
        .any(|e| matches!(e, Effect::Close { conn, .. } if *conn == c)));
    assert!(n.broker.session("c").is_none());
}

#[test]
fn packet_before_connect_closes() {
    let mut n = Net::new();
    let conn = ConnectionId(99);
    n.broker.connection_opened(conn, Timestamp::ZERO);
    let fx = n.send(conn, Packet::PingReq { geolocation: None });
    assert!(matches!(fx[..], [Effect::Close { .. }]));
}

#[test]
fn will_published_on_abnormal_close_only() {
    let mut n = Net::new();
    let s = n.connect("s");
    n.subscribe(s, "will", QoS::AtMostOnce);
    let mut c = Connect::new("w", 60, true);
    c.will = Some(Will {
        topic: "will".into(),
        message: b"gone".to_vec(),
        qos: QoS::AtMostOnce,
        retain: false,
    });
    let (w, _) = n.connect_with(c.clone());
    let fx = n.broker.connection_lost(w, at(1));
    assert_eq!(publishes(&fx, s).len(), 1);

    let (w2, _) = n.connect_with(c);
    let fx = n.send(w2, Packet::Disconnect { geolocation: None });
    assert!(publishes(&fx, s).is_empty());
}

#[test]
fn keep_alive_expiry() {
    let mut n = Net::new();
    let (c, _) = n.connect_with(Connect::new("c", 10, true));
    assert!(n.broker.tick(at(15_000)).is_empty());
    let fx = n.broker.tick(at(15_001));
    assert!(matches!(&fx[..], [Effect::Close { conn, .. }] if *conn == c));
}

#[test]
fn persistent_session_queues_while_offline() {
    let mut n = Net::new();
    let p = n.connect("p");
    let (s, _) = n.connect_with(Connect::new("s", 60, false));
    n.subscribe(s, "q", QoS::AtLeastOnce);
    n.broker.connection_lost(s, at(1));

    let mut m = Publish::new("q", b"later".to_vec());
    m.qos = QoS::AtLeastOnce;
    m.packet_id = Some(1);
    let fx = n.send(p, Packet::Publish(m));
    assert_eq!(routes(&fx), vec![("s".into(), Verdict::Forwarded)]);

    let (s2, fx) = n.connect_with(Connect::new("s", 60, false));
    let packets = sent_to(&fx, s2);
    assert!(matches!(&packets[0], Packet::ConnAck(a) if a.session_present));
    assert!(matches!(&packets[1], Packet::Publish(p) if p.payload == b"later" && !p.dup));
}

#[test]
fn clean_session_drops_fence_and_location() {
    let mut n = Net::new();
    let c = n.connect("c");
    n.set_fence(c, &square(0.0, 0.0, 1.0));
    n.send(
        c,
        Packet::PingReq {
            geolocation: Some(geo(0.0, 0.0)),
        },
    );
    n.send(c, Packet::Disconnect { geolocation: None });
    assert!(n.broker.session("c").is_none());
}

#[test]
fn session_takeover() {
    let mut n = Net::new();
    let old = n.connect("c");
    let (new, fx) = n.connect_with(Connect::new("c", 60, true));
    assert!(fx
        .iter()
        .any(|e| matches!(e, Effect::Close { conn, .. } if *conn == old)));
    assert_eq!(n.broker.client_of(new), Some("c"));
}

#[test]
fn subscribe_failure_code_and_unsubscribe() {
    let mut n = Net::new();
    let c = n.connect("c");
    let fx = n.send(
        c,
        Packet::Subscribe(Subscribe {
            packet_id: 3,
            filters: vec![
                ("ok".into(), QoS::AtLeastOnce),
                ("bad/#/x".into(), QoS::AtMostOnce),
            ],
            geolocation: None,
        }),
    );
    let Packet::SubAck(ack) = &sent_to(&fx, c)[0] else {
        panic!()
    };
    assert_eq!(
        ack.return_codes,
        vec![
            SubscribeReturnCode::Success(QoS::AtLeastOnce),
            SubscribeReturnCode::Failure
        ]
    );
    let fx = n.send(
        c,
        Packet::Unsubscribe(Unsubscribe {
            packet_id: 4,
            filters: vec!["ok".into()],
            geolocation: None,
        }),
    );
    assert_eq!(sent_to(&fx, c), vec![Packet::UnsubAck { packet_id: 4 }]);
    assert!(n.broker.session("c").unwrap().subscriptions.is_empty());
}

#[test]
fn publisher_does_not_receive_own_message() {
    let mut n = Net::new();
    let c = n.connect("c");
    n.subscribe(c, "#", QoS::AtMostOnce);
    let fx = n.send(c, Packet::Publish(Publish::new("x", vec![])));
    assert!(routes(&fx).is_empty());
}

#[test]
fn forwarded_iff_packet() {
    let mut n = Net::new();
    let p = n.connect("p");
    let a = n.connect("a");
    let b = n.connect("b");
    n.set_fence(b, &square(40.0, 40.0, 1.0));
    for c in [a, b] {
        n.subscribe(c, "x", QoS::AtLeastOnce);
    }
    let mut m = Publish::new("x", vec![1]);
    m.geolocation = Some(geo(0.0, 0.0));
    let deliveries = n.broker.route_publish("p", &m, Timestamp::ZERO);
    assert_eq!(deliveries.len(), 2);
    for d in deliveries {
        assert_eq!(d.verdict == Verdict::Forwarded, d.packet.is_some());
        assert!(d.encoded_len > 0);
    }
    let _ = p;
}
