//! Blocking TCP client built on [`ClientEngine`].
//!
//! Operations block until acknowledged or until the timeout passes. Share a
//! client between threads by wrapping it in a `Mutex`; calls then run in lock
//! order.

use std::collections::VecDeque;
use std::io::{self, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpStream, ToSocketAddrs};
use std::time::{Duration, Instant};

use crate::broker::FrameReader;
use crate::codec::{encode_packet, Mode, QoS, SubscribeReturnCode};
use crate::{Geofence, Timestamp};

use super::{ClientConfig, ClientEngine, ClientError, ClientEvent, LocationProvider, Message};

const POLL: Duration = Duration::from_millis(100);

pub struct TcpClient<P> {
    stream: TcpStream,
    engine: ClientEngine<P>,
    frames: FrameReader,
    started: Instant,
    messages: VecDeque<Message>,
    events: VecDeque<ClientEvent>,
}

impl<P: LocationProvider> TcpClient<P> {
    /// Opens the connection and waits for CONNACK.
    pub fn connect(
        config: ClientConfig,
        provider: P,
        timeout: Duration,
    ) -> Result<Self, ClientError> {
        let deadline = Instant::now() + timeout;
        let addrs: Vec<SocketAddr> = config.broker.to_socket_addrs()?.collect();
        let mut last_err = io::Error::new(io::ErrorKind::NotFound, "no address");
        let mut stream = None;
        for addr in addrs {
            match TcpStream::connect_timeout(&addr, timeout) {
                Ok(s) => {
                    stream = Some(s);
                    break;
                }
                Err(e) => last_err = e,
            }
        }
        let stream = stream.ok_or(last_err)?;
        stream.set_nodelay(true)?;
        let mut client = TcpClient {
            stream,
            engine: ClientEngine::new(config, provider)?,
            frames: FrameReader::new(Mode::Extended),
            started: Instant::now(),
            messages: VecDeque::new(),
            events: VecDeque::new(),
        };
        let now = client.now();
        client.engine.connect(now)?;
        client.flush()?;
        loop {
            let found = client.take_event(|e| {
                matches!(
                    e,
                    ClientEvent::Connected { .. } | ClientEvent::ConnectRefused(_)
                )
            });
            match found {
                Some(ClientEvent::Connected { .. }) => return Ok(client),
                Some(ClientEvent::ConnectRefused(code)) => {
                    return Err(ClientError::ConnectRefused(code))
                }
                _ => client.pump(deadline)?,
            }
        }
    }

    fn now(&self) -> Timestamp {
        Timestamp::from_millis(self.started.elapsed().as_millis() as u64)
    }

    pub fn engine(&self) -> &ClientEngine<P> {
        &self.engine
    }

    pub fn engine_mut(&mut self) -> &mut ClientEngine<P> {
        &mut self.engine
    }

    fn flush(&mut self) -> Result<(), ClientError> {
        for packet in self.engine.take_outbound() {
            let bytes = encode_packet(&packet)?;
            if let Err(e) = self.stream.write_all(&bytes) {
                self.engine.connection_lost(e.to_string());
                self.collect();
                return Err(e.into());
            }
        }
        Ok(())
    }

    fn collect(&mut self) {
        for e in self.engine.take_events() {
            match e {
                ClientEvent::Message(m) => self.messages.push_back(m),
                other => self.events.push_back(other),
            }
        }
    }

    fn take_event(&mut self, pred: impl Fn(&ClientEvent) -> bool) -> Option<ClientEvent> {
        let i = self.events.iter().position(pred)?;
        self.events.remove(i)
    }

    /// Reads whatever arrives before `deadline` (at most one poll interval)
    /// and runs timers. Errors with `Timeout` once the deadline has passed.
    fn pump(&mut self, deadline: Instant) -> Result<(), ClientError> {
        let now = Instant::now();
        if now >= deadline {
            return Err(ClientError::Timeout);
        }
        self.stream.set_read_timeout(Some(
            (deadline - now).min(POLL).max(Duration::from_millis(1)),
        ))?;
        let mut buf = [0u8; 4096];
        match self.stream.read(&mut buf) {
            Ok(0) => {
                self.engine.connection_lost("connection closed by broker");
            }
            Ok(n) => {
                self.frames.push(&buf[..n]);
                loop {
                    match self.frames.next_packet() {
                        Ok(Some(p)) => {
                            let now = self.now();
                            self.engine.handle(p, now);
                        }
                        Ok(None) => break,
                        Err(e) => {
                            self.engine.connection_lost(e.to_string());
                            let _ = self.stream.shutdown(Shutdown::Both);
                            break;
                        }
                    }
                }
            }
            Err(e)
                if matches!(
                    e.kind(),
                    io::ErrorKind::WouldBlock
                        | io::ErrorKind::TimedOut
                        | io::ErrorKind::Interrupted
                ) => {}
            Err(e) => self.engine.connection_lost(e.to_string()),
        }
        let now = self.now();
        self.engine.keepalive_tick(now);
        self.flush()?;
        self.collect();
        Ok(())
    }

    /// Waits for the acknowledgement of `packet_id`.
    fn wait_for(&mut self, packet_id: u16, timeout: Duration) -> Result<ClientEvent, ClientError> {
        let deadline = Instant::now() + timeout;
        loop {
            let found = self.take_event(|e| match e {
                ClientEvent::PublishComplete { packet_id: id }
                | ClientEvent::Subscribed { packet_id: id, .. }
                | ClientEvent::Unsubscribed { packet_id: id }
                | ClientEvent::Aborted { packet_id: id } => *id == packet_id,
                ClientEvent::Disconnected { .. } => true,
                _ => false,
            });
            match found {
                Some(ClientEvent::Aborted { .. }) | Some(ClientEvent::Disconnected { .. }) => {
                    return Err(ClientError::Aborted)
                }
                Some(e) => return Ok(e),
                None => self.pump(deadline)?,
            }
        }
    }

    pub fn publish(
        &mut self,
        topic: &str,
        payload: impl Into<Vec<u8>>,
        qos: QoS,
        retain: bool,
        timeout: Duration,
    ) -> Result<(), ClientError> {
        let now = self.now();
        let id = self.engine.publish(topic, payload, qos, retain, now)?;
        self.flush()?;
        if let Some(id) = id {
            self.wait_for(id, timeout)?;
        }
        Ok(())
    }

    pub fn subscribe(
        &mut self,
        filters: &[(String, QoS)],
        timeout: Duration,
    ) -> Result<Vec<SubscribeReturnCode>, ClientError> {
        let now = self.now();
        let id = self.engine.subscribe(filters, now)?;
        self.flush()?;
        match self.wait_for(id, timeout)? {
            ClientEvent::Subscribed { granted, .. } => Ok(granted),
            other => Err(ClientError::Protocol(format!("unexpected {other:?}"))),
        }
    }

    pub fn unsubscribe(
        &mut self,
        filters: &[String],
        timeout: Duration,
    ) -> Result<(), ClientError> {
        let now = self.now();
        let id = self.engine.unsubscribe(filters, now)?;
        self.flush()?;
        self.wait_for(id, timeout).map(|_| ())
    }

    pub fn set_fence(&mut self, fence: &Geofence, timeout: Duration) -> Result<(), ClientError> {
        let now = self.now();
        let id = self.engine.set_fence(fence, now)?;
        self.flush()?;
        self.wait_for(id, timeout).map(|_| ())
    }

    pub fn clear_fence(&mut self, timeout: Duration) -> Result<(), ClientError> {
        let now = self.now();
        let id = self.engine.clear_fence(now)?;
        self.flush()?;
        self.wait_for(id, timeout).map(|_| ())
    }

    /// Sends a PINGREQ, carrying the current location while sharing.
    pub fn ping(&mut self) -> Result<(), ClientError> {
        let now = self.now();
        self.engine.ping(now)?;
        self.flush()
    }

    /// Next received message. `None` timeout waits forever; returns
    /// `Ok(None)` when the timeout passes without a message.
    pub fn next_message(
        &mut self,
        timeout: Option<Duration>,
    ) -> Result<Option<Message>, ClientError> {
        let deadline = timeout.map(|t| Instant::now() + t);
        loop {
            if let Some(m) = self.messages.pop_front() {
                return Ok(Some(m));
            }
            if let Some(ClientEvent::Disconnected { reason }) =
                self.take_event(|e| matches!(e, ClientEvent::Disconnected { .. }))
            {
                return Err(ClientError::Protocol(reason));
            }
            let d = deadline.unwrap_or_else(|| Instant::now() + POLL);
            match self.pump(d) {
                Err(ClientError::Timeout) if deadline.is_some() => return Ok(None),
                Err(ClientError::Timeout) => {}
                Err(e) => return Err(e),
                Ok(()) => {}
            }
        }
    }

    pub fn disconnect(mut self) -> Result<(), ClientError> {
        let now = self.now();
        self.engine.disconnect(now)?;
        self.flush()?;
        let _ = self.stream.shutdown(Shutdown::Both);
        Ok(())
    }
}
