use super::{GeolocationBlock, PacketType, QoS};

#[derive(Debug, Clone, PartialEq)]
pub struct Will {
    pub topic: String,
    pub message: Vec<u8>,
    pub qos: QoS,
    pub retain: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Connect {
    pub protocol_name: String,
    pub protocol_level: u8,
    pub clean_session: bool,
    pub keep_alive: u16,
    pub client_id: String,
    pub will: Option<Will>,
    pub username: Option<String>,
    pub password: Option<Vec<u8>>,
    pub geolocation: Option<GeolocationBlock>,
}

impl Connect {
    /// A 3.1.1 CONNECT with no will or credentials.
    pub fn new(client_id: impl Into<String>, keep_alive: u16, clean_session: bool) -> Self {
        Connect {
            protocol_name: "MQTT".into(),
            protocol_level: 4,
            clean_session,
            keep_alive,
            client_id: client_id.into(),
            will: None,
            username: None,
            password: None,
            geolocation: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConnectReturnCode {
    Accepted = 0,
    UnacceptableProtocolVersion = 1,
    IdentifierRejected = 2,
    ServerUnavailable = 3,
    BadUsernameOrPassword = 4,
    NotAuthorized = 5,
}

impl ConnectReturnCode {
    pub fn from_u8(v: u8) -> Option<Self> {
        use ConnectReturnCode::*;
        Some(match v {
            0 => Accepted,
            1 => UnacceptableProtocolVersion,
            2 => IdentifierRejected,
            3 => ServerUnavailable,
            4 => BadUsernameOrPassword,
            5 => NotAuthorized,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConnAck {
    pub session_present: bool,
    pub return_code: ConnectReturnCode,
}

/// PUBLISH, or PUBLISHG when `geolocation` is present.
#[derive(Debug, Clone, PartialEq)]
pub struct Publish {
    pub dup: bool,
    pub qos: QoS,
    pub retain: bool,
    pub topic: String,
    /// Present iff `qos > 0`.
    pub packet_id: Option<u16>,
    pub geolocation: Option<GeolocationBlock>,
    pub payload: Vec<u8>,
}

impl Publish {
    pub fn new(topic: impl Into<String>, payload: impl Into<Vec<u8>>) -> Self {
        Publish {
            dup: false,
            qos: QoS::AtMostOnce,
            retain: false,
            topic: topic.into(),
            packet_id: None,
            geolocation: None,
            payload: payload.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Subscribe {
    pub packet_id: u16,
    pub filters: Vec<(String, QoS)>,
    pub geolocation: Option<GeolocationBlock>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubscribeReturnCode {
    Success(QoS),
    Failure,
}

impl SubscribeReturnCode {
    pub fn to_u8(self) -> u8 {
        match self {
            SubscribeReturnCode::Success(q) => q.as_u8(),
            SubscribeReturnCode::Failure => 0x80,
        }
    }

    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0x80 => Some(SubscribeReturnCode::Failure),
            _ => QoS::from_u8(v).map(SubscribeReturnCode::Success),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubAck {
    pub packet_id: u16,
    pub return_codes: Vec<SubscribeReturnCode>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Unsubscribe {
    pub packet_id: u16,
    pub filters: Vec<String>,
    pub geolocation: Option<GeolocationBlock>,
}

/// Every MQTT 3.1.1 control packet. PUBLISHG is the `Publish` variant with
/// geolocation present; packets sent only by the broker have no geolocation
/// field at all.
#[derive(Debug, Clone, PartialEq)]
pub enum Packet {
    Connect(Connect),
    ConnAck(ConnAck),
    Publish(Publish),
    PubAck {
        packet_id: u16,
        geolocation: Option<GeolocationBlock>,
    },
    PubRec {
        packet_id: u16,
        geolocation: Option<GeolocationBlock>,
    },
    PubRel {
        packet_id: u16,
        geolocation: Option<GeolocationBlock>,
    },
    PubComp {
        packet_id: u16,
        geolocation: Option<GeolocationBlock>,
    },
    Subscribe(Subscribe),
    SubAck(SubAck),
    Unsubscribe(Unsubscribe),
    UnsubAck {
        packet_id: u16,
    },
    PingReq {
        geolocation: Option<GeolocationBlock>,
    },
    PingResp,
    Disconnect {
        geolocation: Option<GeolocationBlock>,
    },
}

impl Packet {
    pub fn packet_type(&self) -> PacketType {
        match self {
            Packet::Connect(_) => PacketType::Connect,
            Packet::ConnAck(_) => PacketType::ConnAck,
            Packet::Publish(p) if p.geolocation.is_some() => PacketType::PublishG,
            Packet::Publish(_) => PacketType::Publish,
            Packet::PubAck { .. } => PacketType::PubAck,
            Packet::PubRec { .. } => PacketType::PubRec,
            Packet::PubRel { .. } => PacketType::PubRel,
            Packet::PubComp { .. } => PacketType::PubComp,
            Packet::Subscribe(_) => PacketType::Subscribe,
            Packet::SubAck(_) => PacketType::SubAck,
            Packet::Unsubscribe(_) => PacketType::Unsubscribe,
            Packet::UnsubAck { .. } => PacketType::UnsubAck,
            Packet::PingReq { .. } => PacketType::PingReq,
            Packet::PingResp => PacketType::PingResp,
            Packet::Disconnect { .. } => PacketType::Disconnect,
        }
    }

    pub fn geolocation(&self) -> Option<&GeolocationBlock> {
        match self {
            Packet::Connect(c) => c.geolocation.as_ref(),
            Packet::Publish(p) => p.geolocation.as_ref(),
            Packet::Subscribe(s) => s.geolocation.as_ref(),
            Packet::Unsubscribe(u) => u.geolocation.as_ref(),
            Packet::PubAck { geolocation, .. }
            | Packet::PubRec { geolocation, .. }
            | Packet::PubRel { geolocation, .. }
            | Packet::PubComp { geolocation, .. }
            | Packet::PingReq { geolocation }
            | Packet::Disconnect { geolocation } => geolocation.as_ref(),
            Packet::ConnAck(_) | Packet::SubAck(_) | Packet::UnsubAck { .. } | Packet::PingResp => {
                None
            }
        }
    }

    /// Mutable access to the geolocation slot, `None` for variants that
    /// cannot carry one.
    pub fn geolocation_slot(&mut self) -> Option<&mut Option<GeolocationBlock>> {
        match self {
            Packet::Connect(c) => Some(&mut c.geolocation),
            Packet::Publish(p) => Some(&mut p.geolocation),
            Packet::Subscribe(s) => Some(&mut s.geolocation),
            Packet::Unsubscribe(u) => Some(&mut u.geolocation),
            Packet::PubAck { geolocation, .. }
            | Packet::PubRec { geolocation, .. }
            | Packet::PubRel { geolocation, .. }
            | Packet::PubComp { geolocation, .. }
            | Packet::PingReq { geolocation }
            | Packet::Disconnect { geolocation } => Some(geolocation),
            Packet::ConnAck(_) | Packet::SubAck(_) | Packet::UnsubAck { .. } | Packet::PingResp => {
                None
            }
        }
    }

    /// Returns a copy with any geolocation removed.
    pub fn without_geolocation(&self) -> Packet {
        let mut p = self.clone();
        if let Some(slot) = p.geolocation_slot() {
            *slot = None;
        }
        p
    }

    pub fn pub_ack(packet_id: u16) -> Packet {
        Packet::PubAck {
            packet_id,
            geolocation: None,
        }
    }

    pub fn pub_rec(packet_id: u16) -> Packet {
        Packet::PubRec {
            packet_id,
            geolocation: None,
        }
    }

    pub fn pub_rel(packet_id: u16) -> Packet {
        Packet::PubRel {
            packet_id,
            geolocation: None,
        }
    }

    pub fn pub_comp(packet_id: u16) -> Packet {
        Packet::PubComp {
            packet_id,
            geolocation: None,
        }
    }
}
