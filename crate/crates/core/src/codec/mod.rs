//! Wire codec for MQTT 3.1.1 control packets extended with an optional
//! 21-byte geolocation block.
//!
//! Without geolocation every packet is byte-identical to MQTT 3.1.1. With
//! geolocation, bit 3 of the fixed-header flags is set (or, for PUBLISH, the
//! packet type becomes 15) and the block is placed after the variable header
//! and before any payload.

mod decode;
mod encode;
mod geolocation;
mod mbi;
mod packet;
mod primitives;

pub use decode::{decode_packet, frame_len};
pub use encode::encode_packet;
pub use geolocation::{
    decode_geolocation_block, encode_geolocation_block, GeolocationBlock, GEOLOCATION_BLOCK_LEN,
    GEOLOCATION_VERSION,
};
pub use mbi::{decode_mbi, encode_mbi, mbi_len, MAX_REMAINING_LENGTH};
pub use packet::{
    ConnAck, Connect, ConnectReturnCode, Packet, Publish, SubAck, Subscribe, SubscribeReturnCode,
    Unsubscribe, Will,
};
pub use primitives::encode_utf8_field;

use thiserror::Error;

/// Fixed-header flag bit announcing a geolocation block on non-PUBLISH packets.
pub const GEOLOCATION_FLAG: u8 = 0x08;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("{what} {value} exceeds maximum {max}")]
    Range {
        what: &'static str,
        value: u64,
        max: u64,
    },
    #[error("Truncated")]
    Truncated,
    #[error("MalformedLength: remaining length uses more than 4 bytes")]
    MalformedLength,
    #[error("UnknownPacketType: {0}")]
    UnknownPacketType(u8),
    #[error("ProtocolError: {0}")]
    Protocol(String),
    #[error("InvalidGeolocation: non-finite coordinate")]
    InvalidGeolocation,
    #[error("EncodeError: {0}")]
    Encode(String),
}

impl CodecError {
    pub(crate) fn protocol(msg: impl Into<String>) -> Self {
        CodecError::Protocol(msg.into())
    }
}

/// Which dialect the decoder accepts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    /// Plain MQTT 3.1.1: PUBLISHG and the geolocation flag are protocol errors.
    Strict311,
    /// Geolocation-extended dialect; non-finite coordinates are rejected.
    #[default]
    Extended,
    /// Extended dialect that passes NaN/Inf coordinates through.
    Permissive,
}

impl Mode {
    pub fn accepts_geolocation(self) -> bool {
        self != Mode::Strict311
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub enum QoS {
    #[default]
    AtMostOnce = 0,
    AtLeastOnce = 1,
    ExactlyOnce = 2,
}

impl QoS {
    pub fn from_u8(v: u8) -> Option<QoS> {
        match v {
            0 => Some(QoS::AtMostOnce),
            1 => Some(QoS::AtLeastOnce),
            2 => Some(QoS::ExactlyOnce),
            _ => None,
        }
    }

    pub fn as_u8(self) -> u8 {
        self as u8
    }
}

impl std::fmt::Display for QoS {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.as_u8())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PacketType {
    Connect = 1,
    ConnAck = 2,
    Publish = 3,
    PubAck = 4,
    PubRec = 5,
    PubRel = 6,
    PubComp = 7,
    Subscribe = 8,
    SubAck = 9,
    Unsubscribe = 10,
    UnsubAck = 11,
    PingReq = 12,
    PingResp = 13,
    Disconnect = 14,
    PublishG = 15,
}

impl PacketType {
    pub fn from_code(code: u8) -> Result<PacketType, CodecError> {
        use PacketType::*;
        Ok(match code {
            1 => Connect,
            2 => ConnAck,
            3 => Publish,
            4 => PubAck,
            5 => PubRec,
            6 => PubRel,
            7 => PubComp,
            8 => Subscribe,
            9 => SubAck,
            10 => Unsubscribe,
            11 => UnsubAck,
            12 => PingReq,
            13 => PingResp,
            14 => Disconnect,
            15 => PublishG,
            other => return Err(CodecError::UnknownPacketType(other)),
        })
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    /// Client-origin packet types that may carry a geolocation block.
    pub fn is_geo_eligible(self) -> bool {
        !matches!(
            self,
            PacketType::ConnAck | PacketType::SubAck | PacketType::UnsubAck | PacketType::PingResp
        )
    }

    /// The fixed-header flags MQTT 3.1.1 mandates for non-PUBLISH types.
    pub(crate) fn reserved_flags(self) -> u8 {
        match self {
            PacketType::PubRel | PacketType::Subscribe | PacketType::Unsubscribe => 0b0010,
            _ => 0,
        }
    }

    pub fn name(self) -> &'static str {
        use PacketType::*;
        match self {
            Connect => "CONNECT",
            ConnAck => "CONNACK",
            Publish => "PUBLISH",
            PubAck => "PUBACK",
            PubRec => "PUBREC",
            PubRel => "PUBREL",
            PubComp => "PUBCOMP",
            Subscribe => "SUBSCRIBE",
            SubAck => "SUBACK",
            Unsubscribe => "UNSUBSCRIBE",
            UnsubAck => "UNSUBACK",
            PingReq => "PINGREQ",
            PingResp => "PINGRESP",
            Disconnect => "DISCONNECT",
            PublishG => "PUBLISHG",
        }
    }
}

impl std::fmt::Display for PacketType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}
