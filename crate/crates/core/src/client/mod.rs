//! Client protocol engine.
//!
//! [`ClientEngine`] is a sans-io state machine: operations and inbound
//! packets queue outbound packets (drained with [`ClientEngine::take_outbound`])
//! and application events (drained with [`ClientEngine::take_events`]).
//! [`tcp::TcpClient`] wraps it in a blocking socket.

mod provider;
pub mod tcp;

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::time::Duration;

use thiserror::Error;

pub use provider::{FixedLocation, LocationProvider, NoLocation, ScriptedPath};

use crate::codec::{
    CodecError, Connect, ConnectReturnCode, GeolocationBlock, Packet, Publish, QoS, Subscribe,
    SubscribeReturnCode, Unsubscribe,
};
use crate::packet_id::PacketIds;
use crate::sysg::{self, SysgError};
use crate::topic::{validate_filter, validate_topic_name, TopicError};
use crate::{Geofence, Timestamp};

#[derive(Debug, Clone, PartialEq)]
pub struct ClientConfig {
    pub client_id: String,
    pub broker: String,
    pub keep_alive: u16,
    pub clean_session: bool,
    pub share_location: bool,
    pub default_qos: QoS,
    pub retransmit_timeout: Duration,
}

impl ClientConfig {
    pub fn new(client_id: impl Into<String>) -> Self {
        ClientConfig {
            client_id: client_id.into(),
            broker: format!("127.0.0.1:{}", crate::broker::DEFAULT_PORT),
            keep_alive: 60,
            clean_session: true,
            share_location: false,
            default_qos: QoS::AtMostOnce,
            retransmit_timeout: Duration::from_secs(5),
        }
    }

    pub fn validate(&self) -> Result<(), ClientError> {
        if self.client_id.is_empty() {
            return Err(ClientError::Config("client_id must be nonempty".into()));
        }
        if self.keep_alive == 0 {
            return Err(ClientError::Config("keep_alive must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("not connected")]
    NotConnected,
    #[error("already connected or connecting")]
    AlreadyConnected,
    #[error("all packet identifiers are in flight")]
    Busy,
    #[error("invalid topic: {0}")]
    Topic(#[from] TopicError),
    #[error("invalid fence: {0}")]
    Fence(#[from] SysgError),
    #[error("connection refused with return code {0:?}")]
    ConnectRefused(ConnectReturnCode),
    #[error("timed out")]
    Timeout,
    #[error("connection lost before the operation completed")]
    Aborted,
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Application message received from the broker.
#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub topic: String,
    pub payload: Vec<u8>,
    pub qos: QoS,
    pub retain: bool,
    pub dup: bool,
    /// Publisher's position, present when the broker forwarded a PUBLISHG.
    pub geolocation: Option<GeolocationBlock>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ClientEvent {
    Connected {
        session_present: bool,
    },
    ConnectRefused(ConnectReturnCode),
    Message(Message),
    /// QoS 1 publish acknowledged, or QoS 2 publish completed.
    PublishComplete {
        packet_id: u16,
    },
    Subscribed {
        packet_id: u16,
        granted: Vec<SubscribeReturnCode>,
    },
    Unsubscribed {
        packet_id: u16,
    },
    /// An operation that was in flight when the connection ended.
    Aborted {
        packet_id: u16,
    },
    Disconnected {
        reason: String,
    },
    Warning(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConnectionState {
    Idle,
    Connecting,
    Connected,
    Disconnected,
}

/// Acknowledgement a request is waiting for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stage {
    PubAck,
    PubRec,
    PubComp,
    SubAck,
    UnsubAck,
}

#[derive(Debug, Clone)]
struct Pending {
    stage: Stage,
    publish: Option<Publish>,
    sent_at: Timestamp,
}

pub struct ClientEngine<P> {
    config: ClientConfig,
    provider: P,
    state: ConnectionState,
    outbox: VecDeque<Packet>,
    events: VecDeque<ClientEvent>,
    ids: PacketIds,
    pending: BTreeMap<u16, Pending>,
    inbound_qos2: BTreeSet<u16>,
    last_sent: Timestamp,
    ping_sent_at: Option<Timestamp>,
}

impl<P: LocationProvider> ClientEngine<P> {
    pub fn new(config: ClientConfig, provider: P) -> Result<Self, ClientError> {
        config.validate()?;
        Ok(ClientEngine {
            config,
            provider,
            state: ConnectionState::Idle,
            outbox: VecDeque::new(),
            events: VecDeque::new(),
            ids: PacketIds::new(),
            pending: BTreeMap::new(),
            inbound_qos2: BTreeSet::new(),
            last_sent: Timestamp::ZERO,
            ping_sent_at: None,
        })
    }

    pub fn config(&self) -> &ClientConfig {
        &self.config
    }

    pub fn state(&self) -> ConnectionState {
        self.state
    }

    pub fn provider_mut(&mut self) -> &mut P {
        &mut self.provider
    }

    pub fn set_share_location(&mut self, on: bool) {
        self.config.share_location = on;
    }

    pub fn inflight(&self) -> usize {
        self.pending.len()
    }

    pub fn take_outbound(&mut self) -> Vec<Packet> {
        self.outbox.drain(..).collect()
    }

    pub fn take_events(&mut self) -> Vec<ClientEvent> {
        self.events.drain(..).collect()
    }

    /// Queues a packet, attaching the provider's current block to eligible
    /// packets while sharing is on.
    fn send(&mut self, mut packet: Packet, now: Timestamp) {
        if self.config.share_location {
            let block = self.provider.current();
            if let Some(slot) = packet.geolocation_slot() {
                *slot = block;
            }
        }
        self.last_sent = now;
        self.outbox.push_back(packet);
    }

    fn require_connected(&self) -> Result<(), ClientError> {
        if self.state == ConnectionState::Connected {
            Ok(())
        } else {
            Err(ClientError::NotConnected)
        }
    }

    fn allocate(&mut self) -> Result<u16, ClientError> {
        let pending = &self.pending;
        self.ids
            .allocate(|id| pending.contains_key(&id))
            .ok_or(ClientError::Busy)
    }

    pub fn connect(&mut self, now: Timestamp) -> Result<(), ClientError> {
        if matches!(
            self.state,
            ConnectionState::Connecting | ConnectionState::Connected
        ) {
            return Err(ClientError::AlreadyConnected);
        }
        let c = Connect::new(
            self.config.client_id.clone(),
            self.config.keep_alive,
            self.config.clean_session,
        );
        self.state = ConnectionState::Connecting;
        self.ping_sent_at = None;
        self.send(Packet::Connect(c), now);
        Ok(())
    }

    /// Publishes a message. Returns the packet identifier for QoS 1/2, whose
    /// completion is reported as [`ClientEvent::PublishComplete`].
    pub fn publish(
        &mut self,
        topic: &str,
        payload: impl Into<Vec<u8>>,
        qos: QoS,
        retain: bool,
        now: Timestamp,
    ) -> Result<Option<u16>, ClientError> {
        self.require_connected()?;
        validate_topic_name(topic)?;
        let packet_id = if qos == QoS::AtMostOnce {
            None
        } else {
            Some(self.allocate()?)
        };
        let publish = Publish {
            dup: false,
            qos,
            retain,
            topic: topic.to_owned(),
            packet_id,
            geolocation: None,
            payload: payload.into(),
        };
        if let Some(id) = packet_id {
            let stage = if qos == QoS::AtLeastOnce {
                Stage::PubAck
            } else {
                Stage::PubRec
            };
            self.pending.insert(
                id,
                Pending {
                    stage,
                    publish: Some(publish.clone()),
                    sent_at: now,
                },
            );
        }
        self.send(Packet::Publish(publish), now);
        Ok(packet_id)
    }

    pub fn subscribe(
        &mut self,
        filters: &[(String, QoS)],
        now: Timestamp,
    ) -> Result<u16, ClientError> {
        self.require_connected()?;
        if filters.is_empty() {
            return Err(TopicError::Empty.into());
        }
        for (f, _) in filters {
            validate_filter(f)?;
        }
        let id = self.allocate()?;
        self.pending.insert(
            id,
            Pending {
                stage: Stage::SubAck,
                publish: None,
                sent_at: now,
            },
        );
        let s = Subscribe {
            packet_id: id,
            filters: filters.to_vec(),
            geolocation: None,
        };
        self.send(Packet::Subscribe(s), now);
        Ok(id)
    }

    pub fn unsubscribe(&mut self, filters: &[String], now: Timestamp) -> Result<u16, ClientError> {
        self.require_connected()?;
        if filters.is_empty() {
            return Err(TopicError::Empty.into());
        }
        for f in filters {
            validate_filter(f)?;
        }
        let id = self.allocate()?;
        self.pending.insert(
            id,
            Pending {
                stage: Stage::UnsubAck,
                publish: None,
                sent_at: now,
            },
        );
        let u = Unsubscribe {
            packet_id: id,
            filters: filters.to_vec(),
            geolocation: None,
        };
        self.send(Packet::Unsubscribe(u), now);
        Ok(id)
    }

    /// Submits a fence to the broker at QoS 1.
    pub fn set_fence(&mut self, fence: &Geofence, now: Timestamp) -> Result<u16, ClientError> {
        let payload = sysg::encode_fence(fence)?;
        let id = self.publish(sysg::FENCE_SET_TOPIC, payload, QoS::AtLeastOnce, false, now)?;
        Ok(id.expect("QoS 1 has an identifier"))
    }

    pub fn clear_fence(&mut self, now: Timestamp) -> Result<u16, ClientError> {
        let id = self.publish(
            sysg::FENCE_CLEAR_TOPIC,
            Vec::new(),
            QoS::AtLeastOnce,
            false,
            now,
        )?;
        Ok(id.expect("QoS 1 has an identifier"))
    }

    /// Sends a PINGREQ now. While sharing, it carries the current location.
    pub fn ping(&mut self, now: Timestamp) -> Result<(), ClientError> {
        self.require_connected()?;
        if self.ping_sent_at.is_none() {
            self.ping_sent_at = Some(now);
        }
        self.send(Packet::PingReq { geolocation: None }, now);
        Ok(())
    }

    pub fn disconnect(&mut self, now: Timestamp) -> Result<(), ClientError> {
        self.require_connected()?;
        self.send(Packet::Disconnect { geolocation: None }, now);
        self.lost("client disconnected".into());
        Ok(())
    }

    /// The transport failed. Outstanding operations are aborted unless the
    /// session is persistent, in which case they resume on reconnect.
    pub fn connection_lost(&mut self, reason: impl Into<String>) {
        if self.state != ConnectionState::Disconnected {
            self.lost(reason.into());
        }
    }

    fn lost(&mut self, reason: String) {
        self.state = ConnectionState::Disconnected;
        self.ping_sent_at = None;
        if self.config.clean_session {
            for id in std::mem::take(&mut self.pending).into_keys() {
                self.events
                    .push_back(ClientEvent::Aborted { packet_id: id });
            }
            self.inbound_qos2.clear();
        }
        self.events.push_back(ClientEvent::Disconnected { reason });
    }

    /// Keep-alive and retransmission timer. Call periodically.
    pub fn keepalive_tick(&mut self, now: Timestamp) {
        if self.state != ConnectionState::Connected {
            return;
        }
        let keep_alive_ms = u64::from(self.config.keep_alive) * 1000;
        if let Some(sent) = self.ping_sent_at {
            if now.since(sent).as_millis() as u64 >= keep_alive_ms * 3 / 2 {
                self.lost("no PINGRESP within 1.5 x keep-alive".into());
                return;
            }
        }
        if now.since(self.last_sent).as_millis() as u64 >= keep_alive_ms {
            let _ = self.ping(now);
        }

        let timeout = self.config.retransmit_timeout;
        let due: Vec<u16> = self
            .pending
            .iter()
            .filter(|(_, p)| now.since(p.sent_at) >= timeout)
            .map(|(id, _)| *id)
            .collect();
        for id in due {
            if let Some(packet) = self.retransmission(id, now) {
                self.send(packet, now);
            }
        }
    }

    fn retransmission(&mut self, id: u16, now: Timestamp) -> Option<Packet> {
        let p = self.pending.get_mut(&id)?;
        let packet = match p.stage {
            Stage::PubAck | Stage::PubRec => {
                let mut publish = p.publish.clone()?;
                publish.dup = true;
                Packet::Publish(publish)
            }
            Stage::PubComp => Packet::pub_rel(id),
            Stage::SubAck | Stage::UnsubAck => return None,
        };
        p.sent_at = now;
        Some(packet)
    }

    pub fn handle(&mut self, packet: Packet, now: Timestamp) {
        match packet {
            Packet::ConnAck(ack) => {
                if self.state != ConnectionState::Connecting {
                    self.protocol_violation("unexpected CONNACK");
                    return;
                }
                if ack.return_code != ConnectReturnCode::Accepted {
                    self.state = ConnectionState::Disconnected;
                    self.events
                        .push_back(ClientEvent::ConnectRefused(ack.return_code));
                    return;
                }
                self.state = ConnectionState::Connected;
                self.events.push_back(ClientEvent::Connected {
                    session_present: ack.session_present,
                });
                if !ack.session_present {
                    self.pending.clear();
                    self.inbound_qos2.clear();
                }
                let ids: Vec<u16> = self.pending.keys().copied().collect();
                for id in ids {
                    if let Some(p) = self.retransmission(id, now) {
                        self.send(p, now);
                    }
                }
            }
            Packet::Publish(p) => self.handle_publish(p, now),
            Packet::PubAck { packet_id, .. } => self.complete(packet_id, Stage::PubAck, "PUBACK"),
            Packet::PubRec { packet_id, .. } => match self.pending.get_mut(&packet_id) {
                Some(p) if matches!(p.stage, Stage::PubRec | Stage::PubComp) => {
                    p.stage = Stage::PubComp;
                    p.sent_at = now;
                    self.send(Packet::pub_rel(packet_id), now);
                }
                _ => self.warn(format!("PUBREC for unknown packet id {packet_id}")),
            },
            Packet::PubComp { packet_id, .. } => {
                self.complete(packet_id, Stage::PubComp, "PUBCOMP")
            }
            Packet::PubRel { packet_id, .. } => {
                self.inbound_qos2.remove(&packet_id);
                self.send(Packet::pub_comp(packet_id), now);
            }
            Packet::SubAck(ack) => match self.pending.get(&ack.packet_id) {
                Some(p) if p.stage == Stage::SubAck => {
                    self.pending.remove(&ack.packet_id);
                    self.events.push_back(ClientEvent::Subscribed {
                        packet_id: ack.packet_id,
                        granted: ack.return_codes,
                    });
                }
                _ => self.warn(format!("SUBACK for unknown packet id {}", ack.packet_id)),
            },
            Packet::UnsubAck { packet_id } => match self.pending.get(&packet_id) {
                Some(p) if p.stage == Stage::UnsubAck => {
                    self.pending.remove(&packet_id);
                    self.events
                        .push_back(ClientEvent::Unsubscribed { packet_id });
                }
                _ => self.warn(format!("UNSUBACK for unknown packet id {packet_id}")),
            },
            Packet::PingResp => self.ping_sent_at = None,
            other => {
                let ty = other.packet_type();
                self.protocol_violation(&format!("broker sent client-only packet {ty}"));
            }
        }
    }

    fn handle_publish(&mut self, p: Publish, now: Timestamp) {
        let fresh = match (p.qos, p.packet_id) {
            (QoS::AtLeastOnce, Some(id)) => {
                self.send(Packet::pub_ack(id), now);
                true
            }
            (QoS::ExactlyOnce, Some(id)) => {
                let fresh = self.inbound_qos2.insert(id);
                self.send(Packet::pub_rec(id), now);
                fresh
            }
            _ => true,
        };
        if fresh {
            self.events.push_back(ClientEvent::Message(Message {
                topic: p.topic,
                payload: p.payload,
                qos: p.qos,
                retain: p.retain,
                dup: p.dup,
                geolocation: p.geolocation,
            }));
        }
    }

    fn complete(&mut self, id: u16, expected: Stage, name: &str) {
        match self.pending.get(&id) {
            Some(p) if p.stage == expected => {
                self.pending.remove(&id);
                self.events
                    .push_back(ClientEvent::PublishComplete { packet_id: id });
            }
            _ => self.warn(format!("{name} for unknown packet id {id}")),
        }
    }

    fn warn(&mut self, msg: String) {
        log::warn!("{}: {msg}", self.config.client_id);
        self.events.push_back(ClientEvent::Warning(msg));
    }

    fn protocol_violation(&mut self, msg: &str) {
        self.lost(format!("protocol violation: {msg}"));
    }
}
