//! TCP transport for the broker engine.
//!
//! One reader thread per connection decodes frames and posts them to a
//! single event loop that owns the [`Broker`]. The loop performs all writes.

use std::collections::HashMap;
use std::io::{self, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, RecvTimeoutError, Sender};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use crate::codec::{decode_packet, encode_packet, frame_len, CodecError, Mode, Packet};
use crate::Timestamp;

use super::{Broker, BrokerConfig, ConnectionId, Effect, RouteRecord};

const TICK_INTERVAL: Duration = Duration::from_millis(250);
const ACCEPT_POLL: Duration = Duration::from_millis(20);

enum Event {
    Opened(ConnectionId, TcpStream),
    Packet(ConnectionId, Packet),
    Malformed(ConnectionId, CodecError),
    Lost(ConnectionId),
}

pub struct Server {
    listener: TcpListener,
    config: BrokerConfig,
}

impl Server {
    pub fn bind(config: BrokerConfig) -> io::Result<Server> {
        let listener = TcpListener::bind(config.listen)?;
        Ok(Server { listener, config })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    /// Serves until `shutdown` is set. Every routing decision is passed to
    /// `on_route`.
    pub fn run(
        self,
        shutdown: Arc<AtomicBool>,
        mut on_route: impl FnMut(&RouteRecord),
    ) -> io::Result<()> {
        let (tx, rx) = mpsc::channel();
        let mode = self.config.codec_mode();
        self.listener.set_nonblocking(true)?;
        let listener = self.listener;
        let accept_stop = shutdown.clone();
        let acceptor = thread::spawn(move || accept_loop(listener, tx, mode, accept_stop));

        let mut broker = Broker::new(self.config);
        let started = Instant::now();
        let now = || Timestamp::from_millis(started.elapsed().as_millis() as u64);
        let mut streams: HashMap<ConnectionId, TcpStream> = HashMap::new();
        let mut last_tick = Instant::now();

        while !shutdown.load(Ordering::SeqCst) {
            let event = match rx.recv_timeout(TICK_INTERVAL) {
                Ok(e) => Some(e),
                Err(RecvTimeoutError::Timeout) => None,
                Err(RecvTimeoutError::Disconnected) => break,
            };
            let effects = match event {
                Some(Event::Opened(conn, stream)) => {
                    log::info!("{conn}: connected from {:?}", stream.peer_addr().ok());
                    streams.insert(conn, stream);
                    broker.connection_opened(conn, now());
                    Vec::new()
                }
                Some(Event::Packet(conn, packet)) => broker.handle_inbound(conn, packet, now()),
                Some(Event::Malformed(conn, err)) => {
                    log::warn!("{conn}: {err}");
                    if let Some(s) = streams.remove(&conn) {
                        let _ = s.shutdown(Shutdown::Both);
                    }
                    broker.connection_lost(conn, now())
                }
                Some(Event::Lost(conn)) => {
                    streams.remove(&conn);
                    broker.connection_lost(conn, now())
                }
                None => Vec::new(),
            };
            apply(&mut broker, effects, &mut streams, &mut on_route, now());
            if last_tick.elapsed() >= TICK_INTERVAL {
                last_tick = Instant::now();
                let effects = broker.tick(now());
                apply(&mut broker, effects, &mut streams, &mut on_route, now());
            }
        }

        for (_, s) in streams.drain() {
            let _ = s.shutdown(Shutdown::Both);
        }
        let _ = acceptor.join();
        Ok(())
    }
}

fn apply(
    broker: &mut Broker,
    effects: Vec<Effect>,
    streams: &mut HashMap<ConnectionId, TcpStream>,
    on_route: &mut impl FnMut(&RouteRecord),
    now: Timestamp,
) {
    let mut queue = std::collections::VecDeque::from(effects);
    while let Some(effect) = queue.pop_front() {
        match effect {
            Effect::Send { conn, packet } => {
                let Some(stream) = streams.get_mut(&conn) else {
                    continue;
                };
                let written = encode_packet(&packet)
                    .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
                    .and_then(|bytes| stream.write_all(&bytes));
                if let Err(e) = written {
                    log::warn!("{conn}: write failed: {e}");
                    if let Some(s) = streams.remove(&conn) {
                        let _ = s.shutdown(Shutdown::Both);
                    }
                    queue.extend(broker.connection_lost(conn, now));
                }
            }
            Effect::Route(record) => on_route(&record),
            Effect::Close { conn, reason } => {
                log::info!("{conn}: closing: {reason}");
                if let Some(s) = streams.remove(&conn) {
                    let _ = s.shutdown(Shutdown::Both);
                }
            }
            Effect::Warning { client_id, message } => log::warn!("{client_id}: {message}"),
            Effect::SysgRejected { client_id, error } => {
                log::warn!("{client_id}: $SYSg rejected: {error}")
            }
        }
    }
}

fn accept_loop(listener: TcpListener, tx: Sender<Event>, mode: Mode, stop: Arc<AtomicBool>) {
    let mut next_id = 0u64;
    while !stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, _)) => {
                next_id += 1;
                let conn = ConnectionId(next_id);
                let _ = stream.set_nonblocking(false);
                let _ = stream.set_nodelay(true);
                let Ok(reader) = stream.try_clone() else {
                    continue;
                };
                if tx.send(Event::Opened(conn, stream)).is_err() {
                    return;
                }
                let tx = tx.clone();
                thread::spawn(move || read_loop(conn, reader, tx, mode));
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(ACCEPT_POLL),
            Err(e) => {
                log::warn!("accept failed: {e}");
                thread::sleep(ACCEPT_POLL);
            }
        }
    }
}

fn read_loop(conn: ConnectionId, mut stream: TcpStream, tx: Sender<Event>, mode: Mode) {
    let mut frames = FrameReader::new(mode);
    let mut buf = [0u8; 4096];
    loop {
        let n = match stream.read(&mut buf) {
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Ok(0) | Err(_) => {
                let _ = tx.send(Event::Lost(conn));
                return;
            }
            Ok(n) => n,
        };
        frames.push(&buf[..n]);
        loop {
            match frames.next_packet() {
                Ok(Some(p)) => {
                    if tx.send(Event::Packet(conn, p)).is_err() {
                        return;
                    }
                }
                Ok(None) => break,
                Err(e) => {
                    let _ = tx.send(Event::Malformed(conn, e));
                    return;
                }
            }
        }
    }
}

/// Accumulates stream bytes and yields complete decoded packets.
#[derive(Debug)]
pub struct FrameReader {
    buf: Vec<u8>,
    mode: Mode,
}

impl FrameReader {
    pub fn new(mode: Mode) -> Self {
        FrameReader {
            buf: Vec::new(),
            mode,
        }
    }

    pub fn push(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    pub fn next_packet(&mut self) -> Result<Option<Packet>, CodecError> {
        match frame_len(&self.buf)? {
            None => Ok(None),
            Some(len) => {
                let (packet, _) = decode_packet(&self.buf[..len], self.mode)?;
                self.buf.drain(..len);
                Ok(Some(packet))
            }
        }
    }
}

/// Reads one packet from a blocking stream.
pub fn read_packet(stream: &mut impl Read, frames: &mut FrameReader) -> io::Result<Packet> {
    let mut buf = [0u8; 4096];
    loop {
        match frames.next_packet() {
            Ok(Some(p)) => return Ok(p),
            Ok(None) => {}
            Err(e) => return Err(io::Error::new(io::ErrorKind::InvalidData, e)),
        }
        let n = stream.read(&mut buf)?;
        if n == 0 {
            return Err(io::ErrorKind::UnexpectedEof.into());
        }
        frames.push(&buf[..n]);
    }
}
