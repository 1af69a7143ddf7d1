use super::mbi::{write_mbi, MAX_REMAINING_LENGTH};
use super::primitives::{write_binary, write_utf8};
use super::{
    CodecError, Connect, GeolocationBlock, Packet, PacketType, Publish, QoS, GEOLOCATION_FLAG,
};

fn invalid(msg: impl Into<String>) -> CodecError {
    CodecError::Encode(msg.into())
}

fn nonzero_id(id: u16) -> Result<u16, CodecError> {
    if id == 0 {
        Err(invalid("packet identifier must be nonzero"))
    } else {
        Ok(id)
    }
}

fn write_geo(geo: &Option<GeolocationBlock>, out: &mut Vec<u8>) -> Result<(), CodecError> {
    match geo {
        Some(g) => g.write(out),
        None => Ok(()),
    }
}

fn flags_for(ty: PacketType, geo: &Option<GeolocationBlock>) -> u8 {
    ty.reserved_flags() | if geo.is_some() { GEOLOCATION_FLAG } else { 0 }
}

/// Serializes a packet: fixed header, variable header, optional geolocation
/// block, payload.
pub fn encode_packet(p: &Packet) -> Result<Vec<u8>, CodecError> {
    let mut body = Vec::new();
    let flags = match p {
        Packet::Connect(c) => {
            encode_connect(c, &mut body)?;
            flags_for(PacketType::Connect, &c.geolocation)
        }
        Packet::ConnAck(ack) => {
            body.push(u8::from(ack.session_present));
            body.push(ack.return_code as u8);
            0
        }
        Packet::Publish(publish) => encode_publish(publish, &mut body)?,
        Packet::PubAck {
            packet_id,
            geolocation,
        }
        | Packet::PubRec {
            packet_id,
            geolocation,
        }
        | Packet::PubRel {
            packet_id,
            geolocation,
        }
        | Packet::PubComp {
            packet_id,
            geolocation,
        } => {
            body.extend_from_slice(&nonzero_id(*packet_id)?.to_be_bytes());
            write_geo(geolocation, &mut body)?;
            flags_for(p.packet_type(), geolocation)
        }
        Packet::Subscribe(s) => {
            if s.filters.is_empty() {
                return Err(invalid("SUBSCRIBE needs at least one filter"));
            }
            body.extend_from_slice(&nonzero_id(s.packet_id)?.to_be_bytes());
            write_geo(&s.geolocation, &mut body)?;
            for (filter, qos) in &s.filters {
                write_utf8(filter, &mut body)?;
                body.push(qos.as_u8());
            }
            flags_for(PacketType::Subscribe, &s.geolocation)
        }
        Packet::SubAck(ack) => {
            if ack.return_codes.is_empty() {
                return Err(invalid("SUBACK needs at least one return code"));
            }
            body.extend_from_slice(&nonzero_id(ack.packet_id)?.to_be_bytes());
            body.extend(ack.return_codes.iter().map(|c| c.to_u8()));
            0
        }
        Packet::Unsubscribe(u) => {
            if u.filters.is_empty() {
                return Err(invalid("UNSUBSCRIBE needs at least one filter"));
            }
            body.extend_from_slice(&nonzero_id(u.packet_id)?.to_be_bytes());
            write_geo(&u.geolocation, &mut body)?;
            for filter in &u.filters {
                write_utf8(filter, &mut body)?;
            }
            flags_for(PacketType::Unsubscribe, &u.geolocation)
        }
        Packet::UnsubAck { packet_id } => {
            body.extend_from_slice(&nonzero_id(*packet_id)?.to_be_bytes());
            0
        }
        Packet::PingReq { geolocation } | Packet::Disconnect { geolocation } => {
            write_geo(geolocation, &mut body)?;
            flags_for(p.packet_type(), geolocation)
        }
        Packet::PingResp => 0,
    };

    let remaining = u32::try_from(body.len())
        .ok()
        .filter(|&n| n <= MAX_REMAINING_LENGTH)
        .ok_or(CodecError::Range {
            what: "remaining length",
            value: body.len() as u64,
            max: u64::from(MAX_REMAINING_LENGTH),
        })?;
    let mut out = Vec::with_capacity(body.len() + 5);
    out.push((p.packet_type().code() << 4) | flags);
    write_mbi(remaining, &mut out)?;
    out.extend_from_slice(&body);
    Ok(out)
}

fn encode_connect(c: &Connect, body: &mut Vec<u8>) -> Result<(), CodecError> {
    if c.password.is_some() && c.username.is_none() {
        return Err(invalid("password requires a username"));
    }
    write_utf8(&c.protocol_name, body)?;
    body.push(c.protocol_level);
    let mut flags = 0u8;
    if c.username.is_some() {
        flags |= 0x80;
    }
    if c.password.is_some() {
        flags |= 0x40;
    }
    if let Some(will) = &c.will {
        if will.retain {
            flags |= 0x20;
        }
        flags |= will.qos.as_u8() << 3;
        flags |= 0x04;
    }
    if c.clean_session {
        flags |= 0x02;
    }
    body.push(flags);
    body.extend_from_slice(&c.keep_alive.to_be_bytes());
    write_geo(&c.geolocation, body)?;
    write_utf8(&c.client_id, body)?;
    if let Some(will) = &c.will {
        check_topic_name(&will.topic)?;
        write_utf8(&will.topic, body)?;
        write_binary(&will.message, body)?;
    }
    if let Some(user) = &c.username {
        write_utf8(user, body)?;
    }
    if let Some(pass) = &c.password {
        write_binary(pass, body)?;
    }
    Ok(())
}

fn check_topic_name(topic: &str) -> Result<(), CodecError> {
    if topic.is_empty() {
        return Err(invalid("topic name is empty"));
    }
    if topic.contains(['+', '#', '\0']) {
        return Err(invalid("topic name contains a wildcard or U+0000"));
    }
    Ok(())
}

fn encode_publish(p: &Publish, body: &mut Vec<u8>) -> Result<u8, CodecError> {
    check_topic_name(&p.topic)?;
    match (p.qos, p.packet_id) {
        (QoS::AtMostOnce, None) => {
            if p.dup {
                return Err(invalid("DUP must be 0 for QoS 0"));
            }
        }
        (QoS::AtMostOnce, Some(_)) => return Err(invalid("QoS 0 PUBLISH has a packet identifier")),
        (_, None) => return Err(invalid("QoS>0 PUBLISH needs a packet identifier")),
        (_, Some(id)) => {
            nonzero_id(id)?;
        }
    }
    write_utf8(&p.topic, body)?;
    if let Some(id) = p.packet_id {
        body.extend_from_slice(&id.to_be_bytes());
    }
    write_geo(&p.geolocation, body)?;
    body.extend_from_slice(&p.payload);
    Ok((u8::from(p.dup) << 3) | (p.qos.as_u8() << 1) | u8::from(p.retain))
}
