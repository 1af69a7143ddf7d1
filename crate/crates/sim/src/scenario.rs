use std::collections::BTreeSet;

use mqttg::broker::UnknownLocationPolicy;
use mqttg::codec::QoS;
use mqttg::geometry::{FenceMode, GeometryError};
use mqttg::topic::{validate_filter, validate_topic_name, TopicError};
use mqttg::{GeoPoint, Geofence};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq)]
pub enum Movement {
    Fixed(GeoPoint),
    /// `(second, point)` pairs with strictly increasing seconds. Positions
    /// are interpolated linearly and held before the first and after the
    /// last waypoint.
    Waypoints(Vec<(u64, GeoPoint)>),
    /// Each second both coordinates move by a uniform step in
    /// `[-step, step]` degrees, clamped to the valid range.
    RandomWalk {
        start: GeoPoint,
        step: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PublishSpec {
    pub time_ms: u64,
    pub topic: String,
    pub qos: QoS,
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientSpec {
    pub id: String,
    pub movement: Movement,
    /// Whether the client attaches its location to outbound packets.
    pub share_location: bool,
    pub subscriptions: Vec<(String, QoS)>,
    pub fence: Option<Geofence>,
    pub publishes: Vec<PublishSpec>,
}

impl ClientSpec {
    pub fn new(id: impl Into<String>, movement: Movement) -> Self {
        ClientSpec {
            id: id.into(),
            movement,
            share_location: true,
            subscriptions: Vec::new(),
            fence: None,
            publishes: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub seed: u64,
    /// Simulated seconds. Publishes must fall in `[0, duration * 1000)`.
    pub duration_s: u64,
    pub unknown_location: UnknownLocationPolicy,
    pub clients: Vec<ClientSpec>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScenarioError {
    #[error("client id {0:?} is empty, repeated, or contains whitespace")]
    BadClientId(String),
    #[error("client {client}: {what}")]
    Client { client: String, what: String },
    #[error("client {client}: topic: {error}")]
    Topic { client: String, error: TopicError },
    #[error("client {client}: fence: {error}")]
    Fence {
        client: String,
        error: GeometryError,
    },
}

fn client_err(client: &str, what: impl Into<String>) -> ScenarioError {
    ScenarioError::Client {
        client: client.to_owned(),
        what: what.into(),
    }
}

fn valid_point(p: &GeoPoint) -> bool {
    p.is_finite() && p.in_range()
}

impl Scenario {
    pub fn new(seed: u64, duration_s: u64) -> Self {
        Scenario {
            seed,
            duration_s,
            unknown_location: UnknownLocationPolicy::FailOpen,
            clients: Vec::new(),
        }
    }

    pub fn publish_count(&self) -> usize {
        self.clients.iter().map(|c| c.publishes.len()).sum()
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let mut ids = BTreeSet::new();
        for c in &self.clients {
            if c.id.is_empty() || c.id.contains(char::is_whitespace) || !ids.insert(c.id.as_str()) {
                return Err(ScenarioError::BadClientId(c.id.clone()));
            }
            match &c.movement {
                Movement::Fixed(p) if !valid_point(p) => {
                    return Err(client_err(&c.id, "fixed point out of range"))
                }
                Movement::Waypoints(w) => {
                    if w.is_empty() {
                        return Err(client_err(&c.id, "no waypoints"));
                    }
                    if w.iter().any(|(_, p)| !valid_point(p)) {
                        return Err(client_err(&c.id, "waypoint out of range"));
                    }
                    if w.windows(2).any(|p| p[0].0 >= p[1].0) {
                        return Err(client_err(&c.id, "waypoint times must increase"));
                    }
                }
                Movement::RandomWalk { start, step } => {
                    if !valid_point(start) || !step.is_finite() || *step < 0.0 {
                        return Err(client_err(&c.id, "bad random walk"));
                    }
                }
                Movement::Fixed(_) => {}
            }
            for (f, _) in &c.subscriptions {
                validate_filter(f).map_err(|error| ScenarioError::Topic {
                    client: c.id.clone(),
                    error,
                })?;
            }
            if let Some(f) = &c.fence {
                f.validate().map_err(|error| ScenarioError::Fence {
                    client: c.id.clone(),
                    error,
                })?;
            }
            for p in &c.publishes {
                validate_topic_name(&p.topic).map_err(|error| ScenarioError::Topic {
                    client: c.id.clone(),
                    error,
                })?;
                if p.time_ms >= self.duration_s * 1000 {
                    return Err(client_err(
                        &c.id,
                        format!("publish at {} ms is past the end", p.time_ms),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Random-walk city scenario centred on Brandon, Manitoba.
    /// The first `static_fences` clients get static fences and the next
    /// `dynamic_fences` get dynamic ones.
    pub fn random(seed: u64, shape: RandomShape) -> Scenario {
        const TOPICS: [&str; 5] = [
            "city/traffic",
            "city/parking",
            "city/weather",
            "alerts/road/1",
            "alerts/road/2",
        ];
        const FILTERS: [&str; 7] = [
            "city/#",
            "city/+",
            "city/traffic",
            "alerts/#",
            "#",
            "+/parking",
            "alerts/road/+",
        ];
        let centre = GeoPoint::new(49.85, -99.95);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let qos = |rng: &mut ChaCha8Rng| match rng.random_range(0..3) {
            0 => QoS::AtMostOnce,
            1 => QoS::AtLeastOnce,
            _ => QoS::ExactlyOnce,
        };

        let mut clients: Vec<ClientSpec> = (0..shape.clients)
            .map(|i| {
                let start = GeoPoint::new(
                    centre.latitude + rng.random_range(-0.1..0.1),
                    centre.longitude + rng.random_range(-0.15..0.15),
                );
                let mut c = ClientSpec::new(
                    format!("c{i:03}"),
                    Movement::RandomWalk {
                        start,
                        step: shape.step,
                    },
                );
                c.share_location = rng.random_bool(shape.share_probability);
                for _ in 0..rng.random_range(1..=2) {
                    let f = FILTERS[rng.random_range(0..FILTERS.len())];
                    c.subscriptions.push((f.to_owned(), qos(&mut rng)));
                }
                c
            })
            .collect();

        let fenced = (shape.static_fences + shape.dynamic_fences).min(clients.len());
        for (i, c) in clients.iter_mut().take(fenced).enumerate() {
            let dynamic = i >= shape.static_fences;
            let n = rng.random_range(3..=8);
            let radius = rng.random_range(0.04..0.15);
            let c_lat = if dynamic {
                0.0
            } else {
                centre.latitude + rng.random_range(-0.08..0.08)
            };
            let c_lon = if dynamic {
                0.0
            } else {
                centre.longitude + rng.random_range(-0.1..0.1)
            };
            let phase: f64 = rng.random_range(0.0..1.0);
            let vertices = (0..n)
                .map(|k| {
                    let a = phase + std::f64::consts::TAU * k as f64 / n as f64;
                    let r = radius * rng.random_range(0.5..1.0);
                    GeoPoint::new(c_lat + r * a.sin(), c_lon + 1.5 * r * a.cos())
                })
                .collect();
            let mode = if dynamic {
                FenceMode::Dynamic
            } else {
                FenceMode::Static
            };
            c.fence = Some(Geofence::new(mode, vertices));
        }

        let duration_ms = shape.duration_s * 1000;
        for k in 0..shape.publishes {
            let who = rng.random_range(0..clients.len());
            let p = PublishSpec {
                time_ms: rng.random_range(0..duration_ms),
                topic: TOPICS[rng.random_range(0..TOPICS.len())].to_owned(),
                qos: qos(&mut rng),
                payload: format!("m{k}").into_bytes(),
            };
            clients[who].publishes.push(p);
        }
        for c in &mut clients {
            c.publishes.sort_by_key(|p| p.time_ms);
        }
        Scenario {
            seed,
            duration_s: shape.duration_s,
            unknown_location: UnknownLocationPolicy::FailOpen,
            clients,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RandomShape {
    pub clients: usize,
    pub publishes: usize,
    pub static_fences: usize,
    pub dynamic_fences: usize,
    pub duration_s: u64,
    pub step: f64,
    pub share_probability: f64,
}

impl Default for RandomShape {
    fn default() -> Self {
        RandomShape {
            clients: 50,
            publishes: 500,
            static_fences: 10,
            dynamic_fences: 5,
            duration_s: 120,
            step: 0.002,
            share_probability: 0.9,
        }
    }
}
