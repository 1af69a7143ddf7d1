//! Transport-agnostic broker engine.
//!
//! The broker owns all session state and is driven by three inputs: decoded
//! packets from a connection, connection loss, and timer ticks. Each input
//! returns a list of [`Effect`]s for the transport to carry out. Nothing in
//! here blocks or reads a clock, so a given input order always yields the
//! same effects.

mod config;
mod routing;
pub mod server;
pub use server::{read_packet, FrameReader, Server};
mod session;

use std::collections::{BTreeMap, HashMap};

pub use config::{BrokerConfig, ConfigError, DEFAULT_PORT};
pub use routing::{
    fence_verdict, within_fence, Delivery, FenceOwner, RetainedMessage, RouteRecord,
    UnknownLocationPolicy, Verdict,
};
pub use session::{ClientSession, LocationRecord, SubscriptionEntry};

use crate::codec::{
    encode_packet, ConnAck, Connect, ConnectReturnCode, GeolocationBlock, Packet, Publish, QoS,
    SubAck, Subscribe, SubscribeReturnCode, Unsubscribe,
};
use crate::sysg::{self, SysgError};
use crate::topic::{topic_matches, validate_filter};
use crate::Timestamp;
use session::{Flight, Stage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ConnectionId(pub u64);

impl std::fmt::Display for ConnectionId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "conn#{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Effect {
    Send {
        conn: ConnectionId,
        packet: Packet,
    },
    /// A routing decision, for the event log.
    Route(RouteRecord),
    /// The transport must close the connection. Session teardown has already
    /// happened.
    Close {
        conn: ConnectionId,
        reason: String,
    },
    Warning {
        client_id: String,
        message: String,
    },
    /// A `$SYSg` request was rejected; the session's fence is unchanged.
    SysgRejected {
        client_id: String,
        error: SysgError,
    },
}

#[derive(Debug, Clone)]
struct Connection {
    client_id: Option<String>,
    last_activity: Timestamp,
    /// Seconds the broker waits (times 1.5) before declaring the client gone.
    keep_alive: u16,
}

#[derive(Debug)]
pub struct Broker {
    config: BrokerConfig,
    sessions: BTreeMap<String, ClientSession>,
    connections: HashMap<ConnectionId, Connection>,
    retained: BTreeMap<String, RetainedMessage>,
    auto_ids: u64,
}

impl Broker {
    pub fn new(config: BrokerConfig) -> Self {
        Broker {
            config,
            sessions: BTreeMap::new(),
            connections: HashMap::new(),
            retained: BTreeMap::new(),
            auto_ids: 0,
        }
    }

    pub fn config(&self) -> &BrokerConfig {
        &self.config
    }

    pub fn session(&self, client_id: &str) -> Option<&ClientSession> {
        self.sessions.get(client_id)
    }

    pub fn sessions(&self) -> impl Iterator<Item = &ClientSession> {
        self.sessions.values()
    }

    pub fn retained(&self, topic: &str) -> Option<&RetainedMessage> {
        self.retained.get(topic)
    }

    /// Client identifier bound to a connection, once CONNECT succeeded.
    pub fn client_of(&self, conn: ConnectionId) -> Option<&str> {
        self.connections.get(&conn)?.client_id.as_deref()
    }

    /// Registers a new transport connection. No packets are accepted on it
    /// until CONNECT.
    pub fn connection_opened(&mut self, conn: ConnectionId, now: Timestamp) {
        self.connections.insert(
            conn,
            Connection {
                client_id: None,
                last_activity: now,
                keep_alive: 0,
            },
        );
    }

    /// The transport lost the connection without a DISCONNECT.
    pub fn connection_lost(&mut self, conn: ConnectionId, now: Timestamp) -> Vec<Effect> {
        let mut fx = Vec::new();
        self.teardown(conn, false, now, &mut fx);
        fx
    }

    pub fn handle_inbound(
        &mut self,
        conn: ConnectionId,
        packet: Packet,
        now: Timestamp,
    ) -> Vec<Effect> {
        let mut fx = Vec::new();
        let Some(state) = self.connections.get_mut(&conn) else {
            // packets racing a close
            return fx;
        };
        state.last_activity = now;
        let Some(client_id) = state.client_id.clone() else {
            match packet {
                Packet::Connect(c) => self.handle_connect(conn, c, now, &mut fx),
                other => {
                    let reason = format!("{} before CONNECT", other.packet_type());
                    self.close(conn, reason, now, &mut fx);
                }
            }
            return fx;
        };
        if let Packet::Connect(_) = packet {
            self.close(
                conn,
                "second CONNECT on a live connection".into(),
                now,
                &mut fx,
            );
            return fx;
        }
        if let Some(g) = packet.geolocation() {
            self.update_last_location(&client_id, *g, now);
        }

        match packet {
            Packet::Publish(p) => self.handle_publish(conn, &client_id, p, now, &mut fx),
            Packet::PubAck { packet_id, .. } => {
                self.settle(&client_id, packet_id, Stage::Ack, "PUBACK", &mut fx)
            }
            Packet::PubRec { packet_id, .. } => {
                let session = self.sessions.get_mut(&client_id).expect("bound session");
                match session.outbound.get_mut(&packet_id) {
                    Some(f) if matches!(f.stage, Stage::Rec | Stage::Comp) => {
                        f.stage = Stage::Comp;
                        f.sent_at = Some(now);
                        fx.push(Effect::Send {
                            conn,
                            packet: Packet::pub_rel(packet_id),
                        });
                    }
                    _ => fx.push(unknown_ack(&client_id, "PUBREC", packet_id)),
                }
            }
            Packet::PubComp { packet_id, .. } => {
                self.settle(&client_id, packet_id, Stage::Comp, "PUBCOMP", &mut fx)
            }
            Packet::PubRel { packet_id, .. } => {
                let session = self.sessions.get_mut(&client_id).expect("bound session");
                session.inbound_qos2.remove(&packet_id);
                fx.push(Effect::Send {
                    conn,
                    packet: Packet::pub_comp(packet_id),
                });
            }
            Packet::Subscribe(s) => self.handle_subscribe(conn, &client_id, s, now, &mut fx),
            Packet::Unsubscribe(u) => self.handle_unsubscribe(conn, &client_id, u, &mut fx),
            Packet::PingReq { .. } => fx.push(Effect::Send {
                conn,
                packet: Packet::PingResp,
            }),
            Packet::Disconnect { .. } => {
                if let Some(s) = self.sessions.get_mut(&client_id) {
                    s.will = None;
                }
                self.teardown(conn, true, now, &mut fx);
                fx.push(Effect::Close {
                    conn,
                    reason: "client disconnected".into(),
                });
            }
            Packet::ConnAck(_) | Packet::SubAck(_) | Packet::UnsubAck { .. } | Packet::PingResp => {
                let ty = packet.packet_type();
                self.close(
                    conn,
                    format!("client sent server-only packet {ty}"),
                    now,
                    &mut fx,
                );
            }
            Packet::Connect(_) => unreachable!("handled above"),
        }
        fx
    }

    /// Retransmits unacknowledged outbound messages and expires connections
    /// that exceeded 1.5 times their keep-alive.
    pub fn tick(&mut self, now: Timestamp) -> Vec<Effect> {
        let mut fx = Vec::new();
        let mut expired: Vec<ConnectionId> = self
            .connections
            .iter()
            .filter(|(_, c)| c.client_id.is_some() && c.keep_alive > 0)
            .filter(|(_, c)| {
                now.since(c.last_activity).as_millis() > u128::from(c.keep_alive) * 1500
            })
            .map(|(id, _)| *id)
            .collect();
        expired.sort();
        for conn in expired {
            self.close(conn, "keep-alive timeout".into(), now, &mut fx);
        }

        let timeout = self.config.retransmit_timeout;
        for session in self.sessions.values_mut() {
            let Some(conn) = session.connection else {
                continue;
            };
            for (&id, flight) in session.outbound.iter_mut() {
                match flight.sent_at {
                    Some(at) if now.since(at) >= timeout => {}
                    _ => continue,
                }
                flight.sent_at = Some(now);
                fx.push(Effect::Send {
                    conn,
                    packet: retransmission(id, flight),
                });
            }
        }
        fx
    }

    pub fn update_last_location(&mut self, client_id: &str, g: GeolocationBlock, now: Timestamp) {
        if let Some(s) = self.sessions.get_mut(client_id) {
            s.update_last_location(g, now);
        }
    }

    fn close(&mut self, conn: ConnectionId, reason: String, now: Timestamp, fx: &mut Vec<Effect>) {
        self.teardown(conn, false, now, fx);
        fx.push(Effect::Close { conn, reason });
    }

    /// Unbinds a connection from its session. Abnormal endings publish the
    /// will; clean sessions are discarded with their fence and location.
    fn teardown(
        &mut self,
        conn: ConnectionId,
        graceful: bool,
        now: Timestamp,
        fx: &mut Vec<Effect>,
    ) {
        let Some(state) = self.connections.remove(&conn) else {
            return;
        };
        let Some(client_id) = state.client_id else {
            return;
        };
        let Some(session) = self.sessions.get_mut(&client_id) else {
            return;
        };
        if session.connection != Some(conn) {
            return;
        }
        session.connection = None;
        let will = session.will.take();
        if let (false, Some(will)) = (graceful, will) {
            let publish = Publish {
                dup: false,
                qos: will.qos,
                retain: will.retain,
                topic: will.topic,
                packet_id: None,
                geolocation: None,
                payload: will.message,
            };
            self.publish_from(&client_id, &publish, now, fx);
        }
        if self
            .sessions
            .get(&client_id)
            .is_some_and(|s| s.clean_session)
        {
            self.sessions.remove(&client_id);
        }
    }

    fn handle_connect(
        &mut self,
        conn: ConnectionId,
        c: Connect,
        now: Timestamp,
        fx: &mut Vec<Effect>,
    ) {
        let refuse = |fx: &mut Vec<Effect>, code: ConnectReturnCode| {
            fx.push(Effect::Send {
                conn,
                packet: Packet::ConnAck(ConnAck {
                    session_present: false,
                    return_code: code,
                }),
            });
        };
        if c.protocol_name != "MQTT" {
            self.close(
                conn,
                format!("unknown protocol name {:?}", c.protocol_name),
                now,
                fx,
            );
            return;
        }
        if c.protocol_level != 4 {
            refuse(fx, ConnectReturnCode::UnacceptableProtocolVersion);
            self.close(
                conn,
                format!("protocol level {}", c.protocol_level),
                now,
                fx,
            );
            return;
        }
        let client_id = if c.client_id.is_empty() {
            if !c.clean_session {
                refuse(fx, ConnectReturnCode::IdentifierRejected);
                self.close(conn, "empty client id with clean_session=0".into(), now, fx);
                return;
            }
            self.auto_ids += 1;
            format!("auto-{}", self.auto_ids)
        } else {
            c.client_id.clone()
        };

        // session takeover
        if let Some(old) = self.sessions.get(&client_id).and_then(|s| s.connection) {
            if old != conn {
                if let Some(s) = self.sessions.get_mut(&client_id) {
                    s.will = None;
                }
                self.teardown(old, true, now, fx);
                fx.push(Effect::Close {
                    conn: old,
                    reason: format!("session taken over by {conn}"),
                });
            }
        }

        if c.clean_session {
            self.sessions.remove(&client_id);
        }
        let session_present = self.sessions.contains_key(&client_id);
        let session = self
            .sessions
            .entry(client_id.clone())
            .or_insert_with(|| ClientSession::new(client_id.clone()));
        session.clean_session = c.clean_session;
        session.connection = Some(conn);
        session.keep_alive = c.keep_alive;
        session.will = c.will;
        session.geo_capable = false;

        let max = self.config.max_keep_alive;
        let keep_alive = if c.keep_alive == 0 || c.keep_alive > max {
            max
        } else {
            c.keep_alive
        };
        if let Some(state) = self.connections.get_mut(&conn) {
            state.client_id = Some(client_id.clone());
            state.keep_alive = keep_alive;
        }

        fx.push(Effect::Send {
            conn,
            packet: Packet::ConnAck(ConnAck {
                session_present,
                return_code: ConnectReturnCode::Accepted,
            }),
        });
        if let Some(g) = c.geolocation {
            session.update_last_location(g, now);
        }

        // resume unacknowledged deliveries of a persistent session
        for (&id, flight) in session.outbound.iter_mut() {
            let packet = if flight.sent_at.is_some() {
                retransmission(id, flight)
            } else {
                Packet::Publish(flight.publish.clone())
            };
            flight.sent_at = Some(now);
            fx.push(Effect::Send { conn, packet });
        }
    }

    fn handle_publish(
        &mut self,
        conn: ConnectionId,
        client_id: &str,
        p: Publish,
        now: Timestamp,
        fx: &mut Vec<Effect>,
    ) {
        let first_receipt = match (p.qos, p.packet_id) {
            (QoS::ExactlyOnce, Some(id)) => {
                let session = self.sessions.get_mut(client_id).expect("bound session");
                session.inbound_qos2.insert(id)
            }
            _ => true,
        };
        match (p.qos, p.packet_id) {
            (QoS::AtLeastOnce, Some(id)) => fx.push(Effect::Send {
                conn,
                packet: Packet::pub_ack(id),
            }),
            (QoS::ExactlyOnce, Some(id)) => fx.push(Effect::Send {
                conn,
                packet: Packet::pub_rec(id),
            }),
            _ => {}
        }
        if !first_receipt {
            return;
        }
        if sysg::is_sysg_topic(&p.topic) {
            self.handle_sysg(client_id, &p.topic, &p.payload, fx);
            return;
        }
        self.publish_from(client_id, &p, now, fx);
    }

    /// Applies a `$SYSg` request. These are consumed by the broker and never
    /// routed or retained.
    pub fn handle_sysg(
        &mut self,
        client_id: &str,
        topic: &str,
        payload: &[u8],
        fx: &mut Vec<Effect>,
    ) {
        let Some(session) = self.sessions.get_mut(client_id) else {
            return;
        };
        session.geo_capable = true;
        let result = match topic {
            sysg::FENCE_SET_TOPIC => sysg::decode_fence(payload).map(|f| {
                session.fence = Some(f);
            }),
            sysg::FENCE_CLEAR_TOPIC => {
                session.fence = None;
                Ok(())
            }
            other => Err(SysgError::UnknownTopic(other.to_owned())),
        };
        if let Err(error) = result {
            log::warn!("{client_id}: rejected {topic}: {error}");
            fx.push(Effect::SysgRejected {
                client_id: client_id.to_owned(),
                error,
            });
        }
    }

    /// Routes a message from `client_id`, stores it if retained, and turns
    /// the deliveries into effects.
    fn publish_from(&mut self, client_id: &str, p: &Publish, now: Timestamp, fx: &mut Vec<Effect>) {
        if p.retain {
            if p.payload.is_empty() {
                self.retained.remove(&p.topic);
            } else {
                let origin = p
                    .geolocation
                    .or_else(|| self.sessions.get(client_id)?.last_location.map(|l| l.block));
                self.retained.insert(
                    p.topic.clone(),
                    RetainedMessage {
                        topic: p.topic.clone(),
                        payload: p.payload.clone(),
                        qos: p.qos,
                        publisher_id: client_id.to_owned(),
                        origin_location: origin,
                        geolocation: p.geolocation,
                    },
                );
            }
        }
        let deliveries = self.route_publish(client_id, p, now);
        self.emit_deliveries(client_id, &p.topic, deliveries, fx);
    }

    fn emit_deliveries(
        &self,
        publisher: &str,
        topic: &str,
        deliveries: Vec<Delivery>,
        fx: &mut Vec<Effect>,
    ) {
        for d in deliveries {
            fx.push(Effect::Route(RouteRecord {
                publisher: publisher.to_owned(),
                topic: topic.to_owned(),
                subscriber: d.subscriber_id.clone(),
                qos: d.qos,
                verdict: d.verdict,
                encoded_len: d.encoded_len,
            }));
            let conn = self
                .sessions
                .get(&d.subscriber_id)
                .and_then(|s| s.connection);
            if let (Some(packet), Some(conn)) = (d.packet, conn) {
                fx.push(Effect::Send { conn, packet });
            }
        }
    }

    /// Computes one [`Delivery`] per other session with a matching
    /// subscription. Forwarded QoS 1/2 deliveries are registered as in
    /// flight on the subscriber's session (queued if it is offline).
    pub fn route_publish(
        &mut self,
        publisher_id: &str,
        p: &Publish,
        now: Timestamp,
    ) -> Vec<Delivery> {
        if sysg::is_sysg_topic(&p.topic) {
            return Vec::new();
        }
        let (publisher_fence, publisher_location) = match self.sessions.get(publisher_id) {
            Some(s) => (s.fence.clone(), s.last_point()),
            None => (None, None),
        };
        let origin = p
            .geolocation
            .as_ref()
            .map(crate::GeoPoint::from)
            .or(publisher_location);
        let policy = self.config.unknown_location;

        let mut out = Vec::new();
        for (id, session) in self.sessions.iter_mut() {
            if id == publisher_id {
                continue;
            }
            let Some(granted) = session.matching_qos(&p.topic) else {
                continue;
            };
            let qos = granted.min(p.qos);
            let verdict = fence_verdict(
                FenceOwner {
                    fence: session.fence.as_ref(),
                    location: session.last_point(),
                },
                FenceOwner {
                    fence: publisher_fence.as_ref(),
                    location: publisher_location,
                },
                origin,
                policy,
            );
            let outbound = Publish {
                dup: false,
                qos,
                retain: false,
                topic: p.topic.clone(),
                packet_id: None,
                geolocation: if session.geo_capable {
                    p.geolocation
                } else {
                    None
                },
                payload: p.payload.clone(),
            };
            out.push(deliver(session, outbound, verdict, now));
        }
        out
    }

    /// Retained messages matching a newly added filter, fence-checked with
    /// their stored origin location.
    pub fn replay_retained(
        &mut self,
        client_id: &str,
        filter: &str,
        granted: QoS,
        now: Timestamp,
    ) -> Vec<(String, String, Delivery)> {
        let policy = self.config.unknown_location;
        let matching: Vec<RetainedMessage> = self
            .retained
            .values()
            .filter(|r| topic_matches(filter, &r.topic))
            .cloned()
            .collect();
        let mut out = Vec::new();
        for r in matching {
            let (pub_fence, pub_loc) = match self.sessions.get(&r.publisher_id) {
                Some(s) => (s.fence.clone(), s.last_point()),
                None => (None, None),
            };
            let Some(session) = self.sessions.get_mut(client_id) else {
                break;
            };
            let verdict = fence_verdict(
                FenceOwner {
                    fence: session.fence.as_ref(),
                    location: session.last_point(),
                },
                FenceOwner {
                    fence: pub_fence.as_ref(),
                    location: pub_loc,
                },
                r.origin_location.as_ref().map(crate::GeoPoint::from),
                policy,
            );
            let outbound = Publish {
                dup: false,
                qos: granted.min(r.qos),
                retain: true,
                topic: r.topic.clone(),
                packet_id: None,
                geolocation: if session.geo_capable {
                    r.geolocation
                } else {
                    None
                },
                payload: r.payload.clone(),
            };
            let d = deliver(session, outbound, verdict, now);
            out.push((r.publisher_id, r.topic, d));
        }
        out
    }

    fn handle_subscribe(
        &mut self,
        conn: ConnectionId,
        client_id: &str,
        s: Subscribe,
        now: Timestamp,
        fx: &mut Vec<Effect>,
    ) {
        let session = self.sessions.get_mut(client_id).expect("bound session");
        let mut codes = Vec::with_capacity(s.filters.len());
        let mut added = Vec::new();
        for (filter, qos) in &s.filters {
            match validate_filter(filter) {
                Ok(()) => {
                    session.subscribe(filter, *qos);
                    codes.push(SubscribeReturnCode::Success(*qos));
                    added.push((filter.clone(), *qos));
                }
                Err(e) => {
                    fx.push(Effect::Warning {
                        client_id: client_id.to_owned(),
                        message: format!("rejected filter: {e}"),
                    });
                    codes.push(SubscribeReturnCode::Failure);
                }
            }
        }
        fx.push(Effect::Send {
            conn,
            packet: Packet::SubAck(SubAck {
                packet_id: s.packet_id,
                return_codes: codes,
            }),
        });
        for (filter, qos) in added {
            for (publisher, topic, d) in self.replay_retained(client_id, &filter, qos, now) {
                self.emit_deliveries(&publisher, &topic, vec![d], fx);
            }
        }
    }

    fn handle_unsubscribe(
        &mut self,
        conn: ConnectionId,
        client_id: &str,
        u: Unsubscribe,
        fx: &mut Vec<Effect>,
    ) {
        let session = self.sessions.get_mut(client_id).expect("bound session");
        for filter in &u.filters {
            session.unsubscribe(filter);
        }
        fx.push(Effect::Send {
            conn,
            packet: Packet::UnsubAck {
                packet_id: u.packet_id,
            },
        });
    }

    fn settle(
        &mut self,
        client_id: &str,
        id: u16,
        expected: Stage,
        name: &str,
        fx: &mut Vec<Effect>,
    ) {
        let session = self.sessions.get_mut(client_id).expect("bound session");
        match session.outbound.get(&id) {
            Some(f) if f.stage == expected => {
                session.outbound.remove(&id);
            }
            _ => fx.push(unknown_ack(client_id, name, id)),
        }
    }
}

fn unknown_ack(client_id: &str, name: &str, id: u16) -> Effect {
    log::warn!("{client_id}: {name} for unknown packet id {id}");
    Effect::Warning {
        client_id: client_id.to_owned(),
        message: format!("{name} for unknown packet id {id}"),
    }
}

fn retransmission(id: u16, flight: &Flight) -> Packet {
    match flight.stage {
        Stage::Comp => Packet::pub_rel(id),
        Stage::Ack | Stage::Rec => {
            let mut p = flight.publish.clone();
            p.dup = true;
            Packet::Publish(p)
        }
    }
}

/// Builds the delivery for one subscriber; forwarded QoS>0 messages get a
/// packet identifier and an in-flight entry.
fn deliver(
    session: &mut ClientSession,
    mut outbound: Publish,
    verdict: Verdict,
    now: Timestamp,
) -> Delivery {
    let qos = outbound.qos;
    let id_placeholder = (qos != QoS::AtMostOnce).then_some(1);
    let encoded_len = encode_packet(&Packet::Publish(Publish {
        packet_id: id_placeholder,
        ..outbound.clone()
    }))
    .map(|b| b.len())
    .unwrap_or(0);
    let subscriber_id = session.client_id.clone();
    if verdict.is_suppressed() {
        return Delivery {
            subscriber_id,
            qos,
            verdict,
            packet: None,
            encoded_len,
        };
    }
    if qos != QoS::AtMostOnce {
        let Some(id) = session.allocate_id() else {
            log::warn!("{subscriber_id}: no free packet identifier, sending at QoS 0");
            outbound.qos = QoS::AtMostOnce;
            return Delivery {
                subscriber_id,
                qos: QoS::AtMostOnce,
                verdict,
                packet: Some(Packet::Publish(outbound)),
                encoded_len,
            };
        };
        outbound.packet_id = Some(id);
        session.outbound.insert(
            id,
            Flight {
                publish: outbound.clone(),
                stage: if qos == QoS::AtLeastOnce {
                    Stage::Ack
                } else {
                    Stage::Rec
                },
                sent_at: session.connection.map(|_| now),
            },
        );
    }
    Delivery {
        subscriber_id,
        qos,
        verdict,
        packet: Some(Packet::Publish(outbound)),
        encoded_len,
    }
}
