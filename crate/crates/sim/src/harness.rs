//! Runs a scenario against one in-memory broker.
//!
//! Every client is a real [`ClientEngine`] connected to the [`Broker`]
//! engine through a FIFO wire. Each event is processed until the wire is
//! empty before the next event starts, so delivery is instantaneous and the
//! run is a pure function of the scenario and options.
//!
//! Timeline per simulated second `k`: every location-sharing client sends a
//! PINGREQ carrying its position at `k`, then all timers run, then the
//! publishes scheduled in `[k, k+1)` seconds go out in time order. A publish
//! carries the publisher's position at `k`.

use std::cell::Cell;
use std::collections::{BTreeMap, VecDeque};
use std::rc::Rc;
use std::time::Duration;

use mqttg::broker::{Broker, BrokerConfig, ConnectionId, Effect};
use mqttg::client::{ClientConfig, ClientEngine, ClientEvent, LocationProvider};
use mqttg::codec::{encode_packet, GeolocationBlock, Packet, PacketType, QoS};
use mqttg::Timestamp;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::metrics::Metrics;
use crate::scenario::{Scenario, ScenarioError};
use crate::trajectory::Trajectories;
use crate::LogEntry;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    /// Probability that any packet sent after setup is lost.
    pub drop_probability: f64,
    /// Seconds of extra simulated time allowed for retransmissions to
    /// settle after the last scheduled event.
    pub drain_limit_s: u64,
    pub retransmit_timeout: Duration,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            drop_probability: 0.0,
            drain_limit_s: 600,
            retransmit_timeout: Duration::from_secs(5),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Endpoint {
    Broker,
    Client(usize),
}

/// One packet put on the wire.
#[derive(Debug, Clone, PartialEq)]
pub struct Transmission {
    pub time_ms: u64,
    pub from: Endpoint,
    pub to: Endpoint,
    pub packet_type: PacketType,
    pub packet_id: Option<u16>,
    pub dup: bool,
    /// Sent by a retransmission timer rather than in response to an event.
    pub retransmission: bool,
    pub dropped: bool,
    pub len: usize,
}

/// A message handed to a client application.
#[derive(Debug, Clone, PartialEq)]
pub struct Received {
    pub time_ms: u64,
    pub topic: String,
    pub payload: Vec<u8>,
    pub qos: QoS,
    pub dup: bool,
    pub geolocation: Option<GeolocationBlock>,
}

#[derive(Debug, Clone)]
pub struct Run {
    pub metrics: Metrics,
    pub log: Vec<LogEntry>,
    /// Application deliveries, keyed by client id.
    pub received: BTreeMap<String, Vec<Received>>,
    pub transmissions: Vec<Transmission>,
    /// Whether every QoS flow finished before the drain limit.
    pub settled: bool,
}

#[derive(Clone)]
struct SimLocation {
    client: usize,
    tracks: Rc<Trajectories>,
    clock: Rc<Cell<u64>>,
}

impl LocationProvider for SimLocation {
    fn current(&mut self) -> Option<GeolocationBlock> {
        let p = self.tracks.at_ms(self.client, self.clock.get());
        Some(GeolocationBlock::new(p.latitude, p.longitude, 0.0))
    }
}

enum Event {
    Second,
    Publish { client: usize, index: usize },
}

struct Sim<'a> {
    scenario: &'a Scenario,
    broker: Broker,
    clients: Vec<ClientEngine<SimLocation>>,
    clock: Rc<Cell<u64>>,
    wire: VecDeque<(Endpoint, Endpoint, Packet, bool)>,
    loss: Option<(f64, ChaCha8Rng)>,
    log: Vec<LogEntry>,
    received: BTreeMap<String, Vec<Received>>,
    transmissions: Vec<Transmission>,
    published: u64,
}

fn conn(client: usize) -> ConnectionId {
    ConnectionId(client as u64 + 1)
}

pub fn run_scenario(s: &Scenario) -> Result<Run, ScenarioError> {
    run_with(s, SimOptions::default())
}

pub fn run_with(s: &Scenario, opts: SimOptions) -> Result<Run, ScenarioError> {
    s.validate()?;
    let tracks = Rc::new(Trajectories::compute(s));
    let clock = Rc::new(Cell::new(0u64));
    let broker = Broker::new(BrokerConfig {
        unknown_location: s.unknown_location,
        retransmit_timeout: opts.retransmit_timeout,
        ..BrokerConfig::default()
    });
    let clients = s
        .clients
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let cfg = ClientConfig {
                keep_alive: u16::MAX,
                share_location: c.share_location,
                retransmit_timeout: opts.retransmit_timeout,
                ..ClientConfig::new(c.id.clone())
            };
            let provider = SimLocation {
                client: i,
                tracks: tracks.clone(),
                clock: clock.clone(),
            };
            ClientEngine::new(cfg, provider).expect("validated client id")
        })
        .collect();
    let mut sim = Sim {
        scenario: s,
        broker,
        clients,
        clock,
        wire: VecDeque::new(),
        loss: None,
        log: Vec::new(),
        received: s
            .clients
            .iter()
            .map(|c| (c.id.clone(), Vec::new()))
            .collect(),
        transmissions: Vec::new(),
        published: 0,
    };
    sim.setup();
    if opts.drop_probability > 0.0 {
        let rng = ChaCha8Rng::seed_from_u64(s.seed ^ 0x6c6f_7373);
        sim.loss = Some((opts.drop_probability, rng));
    }

    // seconds first so that, at equal times, pings precede publishes
    let mut events: Vec<(u64, Event)> = (0..=s.duration_s)
        .map(|k| (k * 1000, Event::Second))
        .collect();
    for (client, c) in s.clients.iter().enumerate() {
        for (index, p) in c.publishes.iter().enumerate() {
            events.push((p.time_ms, Event::Publish { client, index }));
        }
    }
    events.sort_by_key(|(t, _)| *t);
    for (t, e) in events {
        sim.clock.set(t);
        match e {
            Event::Second => sim.second(t, true),
            Event::Publish { client, index } => sim.publish(client, index, t),
        }
    }

    let end = s.duration_s * 1000;
    let mut settled = sim.quiescent();
    let mut t = end;
    while !settled && t < end + opts.drain_limit_s * 1000 {
        t += 1000;
        sim.clock.set(t);
        sim.second(t, false);
        settled = sim.quiescent();
    }

    let metrics = Metrics::from_run(sim.published, &sim.log, &sim.transmissions);
    Ok(Run {
        metrics,
        log: sim.log,
        received: sim.received,
        transmissions: sim.transmissions,
        settled,
    })
}

impl Sim<'_> {
    fn setup(&mut self) {
        let now = Timestamp::ZERO;
        for i in 0..self.clients.len() {
            self.broker.connection_opened(conn(i), now);
            self.clients[i].connect(now).expect("fresh engine");
            self.pump(0, false);
        }
        for (i, c) in self.scenario.clients.iter().enumerate() {
            if !c.subscriptions.is_empty() {
                self.clients[i]
                    .subscribe(&c.subscriptions, now)
                    .expect("validated filters");
            }
            if let Some(f) = &c.fence {
                self.clients[i].set_fence(f, now).expect("validated fence");
            }
            self.pump(0, false);
        }
    }

    fn second(&mut self, t: u64, pings: bool) {
        let now = Timestamp::from_millis(t);
        if pings {
            for (i, c) in self.scenario.clients.iter().enumerate() {
                if c.share_location {
                    let _ = self.clients[i].ping(now);
                }
            }
            self.pump(t, false);
        }
        let fx = self.broker.tick(now);
        self.apply(fx, t, true);
        for c in &mut self.clients {
            c.keepalive_tick(now);
        }
        self.pump(t, true);
    }

    fn publish(&mut self, client: usize, index: usize, t: u64) {
        let p = &self.scenario.clients[client].publishes[index];
        let now = Timestamp::from_millis(t);
        self.published += 1;
        if let Err(e) = self.clients[client].publish(&p.topic, p.payload.clone(), p.qos, false, now)
        {
            panic!("{}: publish failed: {e}", self.scenario.clients[client].id);
        }
        self.pump(t, false);
    }

    fn quiescent(&self) -> bool {
        self.wire.is_empty()
            && self.clients.iter().all(|c| c.inflight() == 0)
            && self.broker.sessions().all(|s| s.inflight_count() == 0)
    }

    /// Moves client output onto the wire and delivers everything queued.
    /// `timer` marks the client output collected first as retransmissions.
    fn pump(&mut self, t: u64, mut timer: bool) {
        loop {
            for i in 0..self.clients.len() {
                for packet in self.clients[i].take_outbound() {
                    self.wire
                        .push_back((Endpoint::Client(i), Endpoint::Broker, packet, timer));
                }
            }
            timer = false;
            let Some((from, to, packet, retransmission)) = self.wire.pop_front() else {
                break;
            };
            if !self.transmit(t, from, to, &packet, retransmission) {
                continue;
            }
            let now = Timestamp::from_millis(t);
            match (from, to) {
                (Endpoint::Client(i), Endpoint::Broker) => {
                    let fx = self.broker.handle_inbound(conn(i), packet, now);
                    self.apply(fx, t, false);
                }
                (Endpoint::Broker, Endpoint::Client(i)) => {
                    self.clients[i].handle(packet, now);
                    self.collect(i, t);
                }
                _ => unreachable!("clients only talk to the broker"),
            }
        }
    }

    /// Records a transmission; returns false if the packet was lost.
    fn transmit(
        &mut self,
        t: u64,
        from: Endpoint,
        to: Endpoint,
        p: &Packet,
        retransmission: bool,
    ) -> bool {
        let dropped = match &mut self.loss {
            Some((prob, rng)) => rng.random_bool(*prob),
            None => false,
        };
        let (packet_id, dup) = match p {
            Packet::Publish(p) => (p.packet_id, p.dup),
            Packet::PubAck { packet_id, .. }
            | Packet::PubRec { packet_id, .. }
            | Packet::PubRel { packet_id, .. }
            | Packet::PubComp { packet_id, .. }
            | Packet::UnsubAck { packet_id } => (Some(*packet_id), false),
            _ => (None, false),
        };
        self.transmissions.push(Transmission {
            time_ms: t,
            from,
            to,
            packet_type: p.packet_type(),
            packet_id,
            dup,
            retransmission,
            dropped,
            len: encode_packet(p).map(|b| b.len()).unwrap_or(0),
        });
        !dropped
    }

    fn apply(&mut self, fx: Vec<Effect>, t: u64, timer: bool) {
        for e in fx {
            match e {
                Effect::Send { conn, packet } => {
                    let i = (conn.0 - 1) as usize;
                    self.wire
                        .push_back((Endpoint::Broker, Endpoint::Client(i), packet, timer));
                }
                Effect::Route(r) => self.log.push(LogEntry {
                    time_ms: t,
                    publisher: r.publisher,
                    topic: r.topic,
                    subscriber: r.subscriber,
                    qos: r.qos,
                    verdict: r.verdict,
                    encoded_len: r.encoded_len,
                }),
                Effect::Close { conn, reason } => {
                    let i = (conn.0 - 1) as usize;
                    panic!(
                        "{}: broker closed the connection: {reason}",
                        self.scenario.clients[i].id
                    );
                }
                Effect::Warning { .. } | Effect::SysgRejected { .. } => {}
            }
        }
    }

    fn collect(&mut self, i: usize, t: u64) {
        for e in self.clients[i].take_events() {
            if let ClientEvent::Message(m) = e {
                let id = &self.scenario.clients[i].id;
                self.received
                    .get_mut(id)
                    .expect("known client")
                    .push(Received {
                        time_ms: t,
                        topic: m.topic,
                        payload: m.payload,
                        qos: m.qos,
                        dup: m.dup,
                        geolocation: m.geolocation,
                    });
            }
        }
    }
}
