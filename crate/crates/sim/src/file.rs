//! Text scenario format.
//!
//! ```text
//! # comments start with '#'
//! seed = 7
//! duration = 60                 # simulated seconds
//! unknown_location = fail_open  # or fail_closed
//!
//! [client alice]
//! movement = fixed 49.85 -99.95
//! movement = waypoints 0:49.85,-99.95 30:49.90,-99.90
//! movement = random_walk 49.85 -99.95 0.001   # start lat lon, step degrees
//! share_location = true
//! subscribe = city/# 1          # filter qos, repeatable
//! fence = static 49.8 -100.0; 49.8 -99.9; 49.9 -99.9
//! publish = 1500 city/traffic 1 jam on main   # time_ms topic qos payload
//! ```
//!
//! Keys before the first `[client]` block are global. Within a block,
//! `subscribe` and `publish` repeat; the last `movement` wins. Payloads are
//! the rest of the line and may be empty.

use std::fmt::Write as _;

use mqttg::broker::UnknownLocationPolicy;
use mqttg::codec::QoS;
use mqttg::geometry::FenceMode;
use mqttg::{GeoPoint, Geofence};
use thiserror::Error;

use crate::scenario::{ClientSpec, Movement, PublishSpec, Scenario, ScenarioError};

#[derive(Debug, Error, PartialEq)]
pub enum ParseError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error(transparent)]
    Invalid(#[from] ScenarioError),
}

fn syntax(line: usize, message: impl Into<String>) -> ParseError {
    ParseError::Syntax {
        line,
        message: message.into(),
    }
}

fn num<T: std::str::FromStr>(line: usize, s: &str, what: &str) -> Result<T, ParseError> {
    s.parse()
        .map_err(|_| syntax(line, format!("bad {what}: {s:?}")))
}

fn qos(line: usize, s: &str) -> Result<QoS, ParseError> {
    num::<u8>(line, s, "qos")
        .ok()
        .and_then(QoS::from_u8)
        .ok_or_else(|| syntax(line, format!("bad qos: {s:?}")))
}

fn point(line: usize, lat: &str, lon: &str) -> Result<GeoPoint, ParseError> {
    Ok(GeoPoint::new(
        num(line, lat, "latitude")?,
        num(line, lon, "longitude")?,
    ))
}

fn parse_movement(line: usize, v: &str) -> Result<Movement, ParseError> {
    let parts: Vec<&str> = v.split_whitespace().collect();
    match parts.as_slice() {
        ["fixed", lat, lon] => Ok(Movement::Fixed(point(line, lat, lon)?)),
        ["random_walk", lat, lon, step] => Ok(Movement::RandomWalk {
            start: point(line, lat, lon)?,
            step: num(line, step, "step")?,
        }),
        ["waypoints", rest @ ..] if !rest.is_empty() => rest
            .iter()
            .map(|w| {
                let (t, ll) = w
                    .split_once(':')
                    .ok_or_else(|| syntax(line, format!("waypoint {w:?} is not t:lat,lon")))?;
                let (lat, lon) = ll
                    .split_once(',')
                    .ok_or_else(|| syntax(line, format!("waypoint {w:?} is not t:lat,lon")))?;
                Ok((num(line, t, "waypoint time")?, point(line, lat, lon)?))
            })
            .collect::<Result<_, _>>()
            .map(Movement::Waypoints),
        _ => Err(syntax(line, format!("bad movement: {v:?}"))),
    }
}

fn parse_fence(line: usize, v: &str) -> Result<Geofence, ParseError> {
    let (mode, rest) = v
        .split_once(char::is_whitespace)
        .ok_or_else(|| syntax(line, "fence needs a mode and vertices"))?;
    let mode = match mode {
        "static" => FenceMode::Static,
        "dynamic" => FenceMode::Dynamic,
        other => return Err(syntax(line, format!("bad fence mode {other:?}"))),
    };
    let vertices = rest
        .split(';')
        .map(
            |pair| match pair.split_whitespace().collect::<Vec<_>>().as_slice() {
                [lat, lon] => point(line, lat, lon),
                _ => Err(syntax(line, format!("bad fence vertex {pair:?}"))),
            },
        )
        .collect::<Result<_, _>>()?;
    Ok(Geofence::new(mode, vertices))
}

fn parse_bool(line: usize, v: &str) -> Result<bool, ParseError> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(syntax(line, format!("bad boolean {v:?}"))),
    }
}

pub fn parse(text: &str) -> Result<Scenario, ParseError> {
    let mut s = Scenario::new(0, 60);
    let mut current: Option<ClientSpec> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        // payloads may contain '#', so only strip comments elsewhere
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        if let Some(header) = trimmed.strip_prefix('[') {
            let id = header
                .strip_suffix(']')
                .and_then(|h| h.trim().strip_prefix("client"))
                .map(str::trim)
                .ok_or_else(|| syntax(line, format!("bad block header {trimmed:?}")))?;
            if let Some(done) = current.take() {
                s.clients.push(done);
            }
            current = Some(ClientSpec::new(
                id,
                Movement::Fixed(GeoPoint::new(0.0, 0.0)),
            ));
            continue;
        }
        let (key, value) = trimmed
            .split_once('=')
            .ok_or_else(|| syntax(line, "expected key = value"))?;
        let key = key.trim();
        let value = value.trim_start();
        let plain = value.split(" #").next().unwrap_or("").trim();
        match (key, current.as_mut()) {
            ("seed", None) => s.seed = num(line, plain, "seed")?,
            ("duration", None) => s.duration_s = num(line, plain, "duration")?,
            ("unknown_location", None) => {
                s.unknown_location = match plain {
                    "fail_open" => UnknownLocationPolicy::FailOpen,
                    "fail_closed" => UnknownLocationPolicy::FailClosed,
                    other => return Err(syntax(line, format!("bad policy {other:?}"))),
                }
            }
            ("movement", Some(c)) => c.movement = parse_movement(line, plain)?,
            ("share_location", Some(c)) => c.share_location = parse_bool(line, plain)?,
            ("subscribe", Some(c)) => match plain.split_whitespace().collect::<Vec<_>>().as_slice()
            {
                [filter, q] => c.subscriptions.push((filter.to_string(), qos(line, q)?)),
                _ => return Err(syntax(line, "subscribe = <filter> <qos>")),
            },
            ("fence", Some(c)) => c.fence = Some(parse_fence(line, plain)?),
            ("publish", Some(c)) => {
                let mut it = value.trim_end_matches(['\r', '\n']).splitn(4, ' ');
                let (Some(t), Some(topic), Some(q)) = (it.next(), it.next(), it.next()) else {
                    return Err(syntax(line, "publish = <time_ms> <topic> <qos> [payload]"));
                };
                c.publishes.push(PublishSpec {
                    time_ms: num(line, t, "time")?,
                    topic: topic.to_owned(),
                    qos: qos(line, q)?,
                    payload: it.next().unwrap_or("").as_bytes().to_vec(),
                });
            }
            (k, _) => return Err(syntax(line, format!("unexpected key {k:?} here"))),
        }
    }
    if let Some(done) = current {
        s.clients.push(done);
    }
    s.validate()?;
    Ok(s)
}

/// Writes a scenario in the format [`parse`] reads. Payloads are written
/// as lossy UTF-8 and must not contain line breaks.
pub fn to_text(s: &Scenario) -> String {
    let mut out = String::new();
    let policy = match s.unknown_location {
        UnknownLocationPolicy::FailOpen => "fail_open",
        UnknownLocationPolicy::FailClosed => "fail_closed",
    };
    let _ = writeln!(
        out,
        "seed = {}\nduration = {}\nunknown_location = {policy}",
        s.seed, s.duration_s
    );
    for c in &s.clients {
        let _ = writeln!(out, "\n[client {}]", c.id);
        let movement = match &c.movement {
            Movement::Fixed(p) => format!("fixed {} {}", p.latitude, p.longitude),
            Movement::RandomWalk { start, step } => {
                format!("random_walk {} {} {step}", start.latitude, start.longitude)
            }
            Movement::Waypoints(w) => {
                let pts: Vec<String> = w
                    .iter()
                    .map(|(t, p)| format!("{t}:{},{}", p.latitude, p.longitude))
                    .collect();
                format!("waypoints {}", pts.join(" "))
            }
        };
        let _ = writeln!(out, "movement = {movement}");
        let _ = writeln!(out, "share_location = {}", c.share_location);
        for (f, q) in &c.subscriptions {
            let _ = writeln!(out, "subscribe = {f} {}", q.as_u8());
        }
        if let Some(f) = &c.fence {
            let mode = match f.mode {
                FenceMode::Static => "static",
                FenceMode::Dynamic => "dynamic",
            };
            let v: Vec<String> = f
                .vertices
                .iter()
                .map(|p| format!("{} {}", p.latitude, p.longitude))
                .collect();
            let _ = writeln!(out, "fence = {mode} {}", v.join("; "));
        }
        for p in &c.publishes {
            let _ = writeln!(
                out,
                "publish = {} {} {} {}",
                p.time_ms,
                p.topic,
                p.qos.as_u8(),
                String::from_utf8_lossy(&p.payload)
            );
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::RandomShape;

    const SAMPLE: &str = "\
# two clients
seed = 7
duration = 20
unknown_location = fail_closed

[client alice]
movement = waypoints 0:49.85,-99.95 10:49.9,-99.9
share_location = true
subscribe = city/# 1
subscribe = alerts/+ 0
fence = static 49.8 -100.0; 49.8 -99.9; 49.9 -99.9  # triangle

[client bob]
movement = random_walk 49.85 -99.95 0.001
share_location = no
publish = 1500 city/traffic 2 jam on main # not a comment
publish = 2000 city/empty 0
";

    #[test]
    fn sample_parses() {
        let s = parse(SAMPLE).unwrap();
        assert_eq!(s.seed, 7);
        assert_eq!(s.duration_s, 20);
        assert_eq!(s.unknown_location, UnknownLocationPolicy::FailClosed);
        assert_eq!(s.clients.len(), 2);
        let a = &s.clients[0];
        assert_eq!(a.subscriptions[1], ("alerts/+".into(), QoS::AtMostOnce));
        assert_eq!(a.fence.as_ref().unwrap().vertices.len(), 3);
        let b = &s.clients[1];
        assert!(!b.share_location);
        assert_eq!(b.publishes[0].payload, b"jam on main # not a comment");
        assert_eq!(b.publishes[0].qos, QoS::ExactlyOnce);
        assert!(b.publishes[1].payload.is_empty());
    }

    #[test]
    fn round_trip() {
        let s = parse(SAMPLE).unwrap();
        assert_eq!(parse(&to_text(&s)).unwrap(), s);
        let r = Scenario::random(11, RandomShape::default());
        assert_eq!(parse(&to_text(&r)).unwrap(), r);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let e = parse("seed = x").unwrap_err();
        assert_eq!(e, syntax(1, "bad seed: \"x\""));
        assert!(matches!(
            parse("[client a]\nmovement = teleport"),
            Err(ParseError::Syntax { line: 2, .. })
        ));
        assert!(matches!(
            parse("movement = fixed 0 0"),
            Err(ParseError::Syntax { line: 1, .. })
        ));
        assert!(matches!(
            parse("[client a]\nsubscribe = a/#/b 0"),
            Err(ParseError::Invalid(_))
        ));
    }
}
