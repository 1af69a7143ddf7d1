use super::mbi::decode_mbi;
use super::primitives::Reader;
use super::{
    CodecError, ConnAck, Connect, ConnectReturnCode, GeolocationBlock, Mode, Packet, PacketType,
    Publish, QoS, SubAck, Subscribe, SubscribeReturnCode, Unsubscribe, Will, GEOLOCATION_BLOCK_LEN,
    GEOLOCATION_FLAG,
};

/// Length of the complete frame at the front of `bytes`, or `None` when more
/// bytes are needed to know or to hold it.
pub fn frame_len(bytes: &[u8]) -> Result<Option<usize>, CodecError> {
    if bytes.is_empty() {
        return Ok(None);
    }
    match decode_mbi(&bytes[1..]) {
        Ok((remaining, n)) => {
            let total = 1 + n + remaining as usize;
            Ok((bytes.len() >= total).then_some(total))
        }
        Err(CodecError::Truncated) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Decodes one packet from the front of `bytes`, returning it with the
/// number of bytes consumed.
pub fn decode_packet(bytes: &[u8], mode: Mode) -> Result<(Packet, usize), CodecError> {
    let first = *bytes.first().ok_or(CodecError::Truncated)?;
    let ty = PacketType::from_code(first >> 4)?;
    let flags = first & 0x0F;
    let (remaining, n) = decode_mbi(&bytes[1..])?;
    let total = 1 + n + remaining as usize;
    if bytes.len() < total {
        return Err(CodecError::Truncated);
    }
    let mut r = Reader::new(&bytes[1 + n..total]);

    let packet = match ty {
        PacketType::Publish | PacketType::PublishG => {
            let has_geo = ty == PacketType::PublishG;
            if has_geo && !mode.accepts_geolocation() {
                return Err(CodecError::protocol(
                    "PUBLISHG is not valid in strict 3.1.1 mode",
                ));
            }
            Packet::Publish(decode_publish(flags, has_geo, &mut r, mode)?)
        }
        _ => {
            let has_geo = geo_flag(ty, flags, mode)?;
            let packet = decode_body(ty, has_geo, &mut r, mode)?;
            if !r.is_empty() {
                return Err(CodecError::protocol(format!(
                    "{} has {} unexpected trailing bytes",
                    ty,
                    r.remaining()
                )));
            }
            packet
        }
    };
    Ok((packet, total))
}

/// Validates the flags nibble of a non-PUBLISH packet and reports whether the
/// geolocation flag is set.
fn geo_flag(ty: PacketType, flags: u8, mode: Mode) -> Result<bool, CodecError> {
    let reserved = ty.reserved_flags();
    if flags == reserved {
        return Ok(false);
    }
    if flags == reserved | GEOLOCATION_FLAG {
        if !ty.is_geo_eligible() {
            return Err(CodecError::protocol(format!(
                "geolocation flag set on {ty}, which never carries geolocation"
            )));
        }
        if !mode.accepts_geolocation() {
            return Err(CodecError::protocol(format!(
                "geolocation flag set on {ty} in strict 3.1.1 mode"
            )));
        }
        return Ok(true);
    }
    Err(CodecError::protocol(format!(
        "invalid fixed header flags {flags:#06b} for {ty}"
    )))
}

fn read_geo(
    has_geo: bool,
    r: &mut Reader<'_>,
    mode: Mode,
) -> Result<Option<GeolocationBlock>, CodecError> {
    if !has_geo {
        return Ok(None);
    }
    let raw = r.take(GEOLOCATION_BLOCK_LEN)?;
    GeolocationBlock::read(raw, mode == Mode::Permissive).map(Some)
}

fn packet_id(r: &mut Reader<'_>) -> Result<u16, CodecError> {
    match r.u16()? {
        0 => Err(CodecError::protocol("packet identifier is zero")),
        id => Ok(id),
    }
}

fn topic_name(r: &mut Reader<'_>) -> Result<String, CodecError> {
    let topic = r.utf8()?;
    if topic.is_empty() {
        return Err(CodecError::protocol("empty topic name"));
    }
    if topic.contains(['+', '#']) {
        return Err(CodecError::protocol("wildcard in topic name"));
    }
    Ok(topic)
}

fn decode_publish(
    flags: u8,
    has_geo: bool,
    r: &mut Reader<'_>,
    mode: Mode,
) -> Result<Publish, CodecError> {
    let qos = QoS::from_u8((flags >> 1) & 0b11)
        .ok_or_else(|| CodecError::protocol("PUBLISH with QoS 3"))?;
    let dup = flags & 0b1000 != 0;
    if dup && qos == QoS::AtMostOnce {
        return Err(CodecError::protocol("DUP set on QoS 0 PUBLISH"));
    }
    let topic = topic_name(r)?;
    let packet_id = if qos == QoS::AtMostOnce {
        None
    } else {
        Some(packet_id(r)?)
    };
    let geolocation = read_geo(has_geo, r, mode)?;
    Ok(Publish {
        dup,
        qos,
        retain: flags & 1 != 0,
        topic,
        packet_id,
        geolocation,
        payload: r.rest().to_vec(),
    })
}

fn decode_body(
    ty: PacketType,
    has_geo: bool,
    r: &mut Reader<'_>,
    mode: Mode,
) -> Result<Packet, CodecError> {
    Ok(match ty {
        PacketType::Connect => Packet::Connect(decode_connect(has_geo, r, mode)?),
        PacketType::ConnAck => {
            let ack_flags = r.u8()?;
            if ack_flags & 0xFE != 0 {
                return Err(CodecError::protocol("reserved CONNACK flags set"));
            }
            let code = r.u8()?;
            let return_code = ConnectReturnCode::from_u8(code).ok_or_else(|| {
                CodecError::protocol(format!("unknown CONNACK return code {code}"))
            })?;
            Packet::ConnAck(ConnAck {
                session_present: ack_flags == 1,
                return_code,
            })
        }
        PacketType::PubAck | PacketType::PubRec | PacketType::PubRel | PacketType::PubComp => {
            let packet_id = packet_id(r)?;
            let geolocation = read_geo(has_geo, r, mode)?;
            match ty {
                PacketType::PubAck => Packet::PubAck {
                    packet_id,
                    geolocation,
                },
                PacketType::PubRec => Packet::PubRec {
                    packet_id,
                    geolocation,
                },
                PacketType::PubRel => Packet::PubRel {
                    packet_id,
                    geolocation,
                },
                _ => Packet::PubComp {
                    packet_id,
                    geolocation,
                },
            }
        }
        PacketType::Subscribe => {
            let packet_id = packet_id(r)?;
            let geolocation = read_geo(has_geo, r, mode)?;
            let mut filters = Vec::new();
            while !r.is_empty() {
                let filter = r.utf8()?;
                let requested = r.u8()?;
                let qos = QoS::from_u8(requested).ok_or_else(|| {
                    CodecError::protocol(format!("invalid requested QoS byte {requested:#04x}"))
                })?;
                filters.push((filter, qos));
            }
            if filters.is_empty() {
                return Err(CodecError::protocol("SUBSCRIBE without topic filters"));
            }
            Packet::Subscribe(Subscribe {
                packet_id,
                filters,
                geolocation,
            })
        }
        PacketType::SubAck => {
            let packet_id = packet_id(r)?;
            let return_codes = r
                .rest()
                .iter()
                .map(|&b| {
                    SubscribeReturnCode::from_u8(b).ok_or_else(|| {
                        CodecError::protocol(format!("invalid SUBACK return code {b:#04x}"))
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            if return_codes.is_empty() {
                return Err(CodecError::protocol("SUBACK without return codes"));
            }
            Packet::SubAck(SubAck {
                packet_id,
                return_codes,
            })
        }
        PacketType::Unsubscribe => {
            let packet_id = packet_id(r)?;
            let geolocation = read_geo(has_geo, r, mode)?;
            let mut filters = Vec::new();
            while !r.is_empty() {
                filters.push(r.utf8()?);
            }
            if filters.is_empty() {
                return Err(CodecError::protocol("UNSUBSCRIBE without topic filters"));
            }
            Packet::Unsubscribe(Unsubscribe {
                packet_id,
                filters,
                geolocation,
            })
        }
        PacketType::UnsubAck => Packet::UnsubAck {
            packet_id: packet_id(r)?,
        },
        PacketType::PingReq => Packet::PingReq {
            geolocation: read_geo(has_geo, r, mode)?,
        },
        PacketType::PingResp => Packet::PingResp,
        PacketType::Disconnect => Packet::Disconnect {
            geolocation: read_geo(has_geo, r, mode)?,
        },
        PacketType::Publish | PacketType::PublishG => unreachable!("handled by decode_publish"),
    })
}

fn decode_connect(has_geo: bool, r: &mut Reader<'_>, mode: Mode) -> Result<Connect, CodecError> {
    let protocol_name = r.utf8()?;
    let protocol_level = r.u8()?;
    let flags = r.u8()?;
    if flags & 0x01 != 0 {
        return Err(CodecError::protocol("reserved CONNECT flag set"));
    }
    let has_will = flags & 0x04 != 0;
    let will_qos =
        QoS::from_u8((flags >> 3) & 0b11).ok_or_else(|| CodecError::protocol("will QoS 3"))?;
    let will_retain = flags & 0x20 != 0;
    if !has_will && (will_qos != QoS::AtMostOnce || will_retain) {
        return Err(CodecError::protocol(
            "will QoS/retain set without will flag",
        ));
    }
    let has_user = flags & 0x80 != 0;
    let has_pass = flags & 0x40 != 0;
    if has_pass && !has_user {
        return Err(CodecError::protocol("password flag without username flag"));
    }
    let keep_alive = r.u16()?;
    let geolocation = read_geo(has_geo, r, mode)?;
    let client_id = r.utf8()?;
    let will = if has_will {
        let topic = topic_name(r)?;
        let message = r.binary()?.to_vec();
        Some(Will {
            topic,
            message,
            qos: will_qos,
            retain: will_retain,
        })
    } else {
        None
    };
    let username = if has_user { Some(r.utf8()?) } else { None };
    let password = if has_pass {
        Some(r.binary()?.to_vec())
    } else {
        None
    };
    Ok(Connect {
        protocol_name,
        protocol_level,
        clean_session: flags & 0x02 != 0,
        keep_alive,
        client_id,
        will,
        username,
        password,
        geolocation,
    })
}
