//! Pieces of the `mqttg` command line that are worth testing without a
//! process: the packet dump, the fence file format and output escaping.

use std::fmt::Write as _;

use mqttg::codec::{GeolocationBlock, Packet, SubscribeReturnCode};
use mqttg::geometry::FenceMode;
use mqttg::{GeoPoint, Geofence};

/// Exit codes, stable across releases.
pub mod exit {
    pub const OK: u8 = 0;
    /// Publish not acknowledged, broker unreachable or refused, malformed
    /// packet, connection lost.
    pub const FAILURE: u8 = 1;
    /// Bad usage, unreadable config, fence or scenario file, or a listen
    /// address that cannot be bound.
    pub const USAGE: u8 = 2;
}

pub fn geo_summary(g: &GeolocationBlock) -> String {
    format!(
        "geolocation v{} lat={} lon={} elev={}",
        g.version, g.latitude, g.longitude, g.elevation
    )
}

/// Human-readable dump of one decoded packet. The first line is a summary,
/// every further line is `key=value`.
pub fn describe(p: &Packet, raw: &[u8]) -> String {
    let kind = p.packet_type().name();
    let mut out = match p.geolocation() {
        Some(g) => format!("{kind} + {}\n", geo_summary(g)),
        None => format!("{kind}, no geolocation\n"),
    };
    let mut field = |k: &str, v: &dyn std::fmt::Display| {
        let _ = writeln!(out, "{k}={v}");
    };
    field("type", &(raw[0] >> 4));
    field("flags", &format!("{:#06b}", raw[0] & 0x0F));
    field("remaining_length", &(raw.len() - header_len(raw)));
    match p {
        Packet::Connect(c) => {
            field(
                "protocol",
                &format!("{} level {}", c.protocol_name, c.protocol_level),
            );
            field("clean_session", &c.clean_session);
            field("keep_alive", &c.keep_alive);
            field("client_id", &escape(c.client_id.as_bytes()));
            if let Some(w) = &c.will {
                field("will_topic", &w.topic);
                field("will_message", &escape(&w.message));
                field("will_qos", &w.qos);
                field("will_retain", &w.retain);
            }
            if let Some(u) = &c.username {
                field("username", u);
            }
            if let Some(pw) = &c.password {
                field("password", &format!("<{} bytes>", pw.len()));
            }
        }
        Packet::ConnAck(a) => {
            field("session_present", &a.session_present);
            field("return_code", &format!("{:?}", a.return_code));
        }
        Packet::Publish(m) => {
            field("dup", &m.dup);
            field("qos", &m.qos);
            field("retain", &m.retain);
            field("topic", &m.topic);
            if let Some(id) = m.packet_id {
                field("packet_id", &id);
            }
            field("payload", &escape(&m.payload));
        }
        Packet::PubAck { packet_id, .. }
        | Packet::PubRec { packet_id, .. }
        | Packet::PubRel { packet_id, .. }
        | Packet::PubComp { packet_id, .. }
        | Packet::UnsubAck { packet_id } => field("packet_id", packet_id),
        Packet::Subscribe(s) => {
            field("packet_id", &s.packet_id);
            for (f, q) in &s.filters {
                field("filter", &format!("{f} qos={q}"));
            }
        }
        Packet::SubAck(s) => {
            field("packet_id", &s.packet_id);
            for rc in &s.return_codes {
                match rc {
                    SubscribeReturnCode::Success(q) => field("granted", q),
                    SubscribeReturnCode::Failure => field("granted", &"failure"),
                }
            }
        }
        Packet::Unsubscribe(u) => {
            field("packet_id", &u.packet_id);
            for f in &u.filters {
                field("filter", f);
            }
        }
        Packet::PingReq { .. } | Packet::PingResp | Packet::Disconnect { .. } => {}
    }
    if let Some(g) = p.geolocation() {
        field("geo_version", &g.version);
        field("latitude", &g.latitude);
        field("longitude", &g.longitude);
        field("elevation", &g.elevation);
    }
    out
}

fn header_len(raw: &[u8]) -> usize {
    1 + raw[1..].iter().take_while(|b| *b & 0x80 != 0).count() + 1
}

/// Payloads on one line: backslash, tab, CR and LF are escaped, invalid
/// UTF-8 is replaced.
pub fn escape(bytes: &[u8]) -> String {
    let mut s = String::new();
    for c in String::from_utf8_lossy(bytes).chars() {
        match c {
            '\\' => s.push_str("\\\\"),
            '\t' => s.push_str("\\t"),
            '\n' => s.push_str("\\n"),
            '\r' => s.push_str("\\r"),
            c => s.push(c),
        }
    }
    s
}

/// `topic<TAB>payload<TAB>lat lon elev`, or `-` in the last column when the
/// message came without a location.
pub fn message_line(topic: &str, payload: &[u8], geo: Option<&GeolocationBlock>) -> String {
    let location = match geo {
        Some(g) => format!("{} {} {}", g.latitude, g.longitude, g.elevation),
        None => "-".into(),
    };
    format!(
        "{}\t{}\t{location}",
        escape(topic.as_bytes()),
        escape(payload)
    )
}

/// Fence file: the first non-blank line is `static` or `dynamic`, each
/// further line a `lat lon` pair. `#` starts a comment.
pub fn parse_fence_file(text: &str) -> Result<Geofence, String> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());
    let mode = match lines.next() {
        Some((_, "static")) => FenceMode::Static,
        Some((_, "dynamic")) => FenceMode::Dynamic,
        Some((n, other)) => {
            return Err(format!(
                "line {n}: expected static or dynamic, got {other:?}"
            ))
        }
        None => return Err("empty fence file".into()),
    };
    let mut vertices = Vec::new();
    for (n, line) in lines {
        let parts: Vec<&str> = line.split_whitespace().collect();
        let [lat, lon] = parts.as_slice() else {
            return Err(format!("line {n}: expected `lat lon`"));
        };
        let lat: f64 = lat
            .parse()
            .map_err(|_| format!("line {n}: bad latitude {lat:?}"))?;
        let lon: f64 = lon
            .parse()
            .map_err(|_| format!("line {n}: bad longitude {lon:?}"))?;
        vertices.push(GeoPoint::new(lat, lon));
    }
    let fence = Geofence::new(mode, vertices);
    fence.validate().map_err(|e| e.to_string())?;
    Ok(fence)
}
