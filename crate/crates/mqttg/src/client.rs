//! Blocking MQTTg client.
//!
//! A background reader thread answers the broker (PUBACK, PUBREC, PUBCOMP for
//! inbound messages), hands acknowledgements to waiting callers and queues
//! application messages for [`Client::recv`]. A second thread sends PINGREQ
//! when the connection has been idle for half the keep-alive period.
//!
//! With [`GeoMode::AttachAll`] every packet type able to carry a geolocation
//! block gets one from the configured [`LocationSource`]. When the source
//! returns `None` the packet goes out as plain MQTT.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::{self, Write};
use std::net::{Shutdown, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use log::debug;
use mqttg_core::pkid::PacketIds;
use mqttg_core::topic::{validate_filter, validate_topic_name, TopicError};
use mqttg_core::{
    Ack, Connect, ConnectReturnCode, GeoLocation, LastWill, Packet, Publish, QoS, SubackCode, Subscribe,
    TopicFilter, Unsubscribe,
};

use crate::framing::{FrameError, FrameReader};

pub type LocationSource = Arc<dyn Fn() -> Option<GeoLocation> + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GeoMode {
    /// Plain MQTT 3.1.1 on the wire.
    #[default]
    Off,
    /// Attach the current location to every packet type that can carry it.
    AttachAll,
}

#[derive(Clone)]
pub struct ClientConfig {
    pub client_id: String,
    pub host: String,
    pub port: u16,
    /// Seconds; must be non-zero.
    pub keep_alive: u16,
    pub geo_mode: GeoMode,
    pub location_source: Option<LocationSource>,
    pub will: Option<LastWill>,
    pub connect_timeout: Duration,
    /// Wait before the first retransmission; doubles on every retry.
    pub retry_backoff: Duration,
    pub max_retries: u32,
}

impl fmt::Debug for ClientConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ClientConfig")
            .field("client_id", &self.client_id)
            .field("host", &self.host)
            .field("port", &self.port)
            .field("keep_alive", &self.keep_alive)
            .field("geo_mode", &self.geo_mode)
            .field("location_source", &self.location_source.is_some())
            .field("will", &self.will)
            .field("connect_timeout", &self.connect_timeout)
            .field("retry_backoff", &self.retry_backoff)
            .field("max_retries", &self.max_retries)
            .finish()
    }
}

impl ClientConfig {
    pub fn new(client_id: impl Into<String>, host: impl Into<String>, port: u16) -> Self {
        ClientConfig {
            client_id: client_id.into(),
            host: host.into(),
            port,
            keep_alive: 60,
            geo_mode: GeoMode::Off,
            location_source: None,
            will: None,
            connect_timeout: Duration::from_secs(5),
            retry_backoff: Duration::from_secs(1),
            max_retries: 5,
        }
    }

    /// Switches to [`GeoMode::AttachAll`] with the given source.
    pub fn with_location(mut self, source: impl Fn() -> Option<GeoLocation> + Send + Sync + 'static) -> Self {
        self.geo_mode = GeoMode::AttachAll;
        self.location_source = Some(Arc::new(source));
        self
    }

    pub fn validate(&self) -> Result<(), ClientError> {
        if self.client_id.is_empty() {
            return Err(ClientError::InvalidConfig("client id must not be empty"));
        }
        if self.keep_alive == 0 {
            return Err(ClientError::InvalidConfig("keep-alive must be positive"));
        }
        if self.geo_mode == GeoMode::AttachAll && self.location_source.is_none() {
            return Err(ClientError::InvalidConfig("geo mode needs a location source"));
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("timed out connecting to the broker")]
    ConnectTimeout,
    #[error("broker refused the connection: {0:?}")]
    ConnectionRefused(ConnectReturnCode),
    #[error("not connected")]
    NotConnected,
    #[error("no acknowledgement after {0} retransmissions")]
    AckTimeout(u32),
    #[error("broker refused the subscription")]
    SubscriptionRefused,
    #[error("invalid topic: {0}")]
    InvalidTopic(TopicError),
    #[error("invalid geo filter: {0}")]
    InvalidFilter(mqttg_core::Error),
    #[error("all packet identifiers are in use")]
    NoPacketIds,
    #[error("unexpected {0} from broker")]
    Unexpected(&'static str),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error(transparent)]
    Codec(#[from] mqttg_core::Error),
}

/// An application message delivered by the broker.
#[derive(Debug, Clone, PartialEq)]
pub struct InboundMessage {
    pub topic: String,
    pub payload: Vec<u8>,
    pub qos: QoS,
    pub retain: bool,
    /// Present when the broker forwarded the publisher's location.
    pub publisher_geolocation: Option<GeoLocation>,
}

#[derive(Default)]
struct State {
    ids: PacketIds,
    waiters: HashMap<u16, Sender<Packet>>,
    pings: Vec<Sender<()>>,
    inbound_qos2: HashSet<u16>,
}

struct Inner {
    config: ClientConfig,
    stream: TcpStream,
    writer: Mutex<TcpStream>,
    connected: AtomicBool,
    state: Mutex<State>,
    last_sent: Mutex<Instant>,
    stopped: Mutex<bool>,
    stop_cv: Condvar,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

impl Inner {
    fn location(&self) -> Option<GeoLocation> {
        match (self.config.geo_mode, &self.config.location_source) {
            (GeoMode::AttachAll, Some(src)) => src().filter(|g| g.validate().is_ok()),
            _ => None,
        }
    }

    fn send(&self, packet: &Packet) -> Result<(), ClientError> {
        if !self.connected.load(Ordering::SeqCst) {
            return Err(ClientError::NotConnected);
        }
        let bytes = packet.to_bytes()?;
        let written = lock(&self.writer).write_all(&bytes);
        if let Err(e) = written {
            self.connected.store(false, Ordering::SeqCst);
            return Err(e.into());
        }
        *lock(&self.last_sent) = Instant::now();
        Ok(())
    }

    fn ack(&self, make: fn(Ack) -> Packet, pkid: u16) -> Result<(), ClientError> {
        self.send(&make(Ack { pkid, geo: self.location() }))
    }

    /// Reserves a packet id whose acknowledgements will arrive on the
    /// returned receiver.
    fn reserve(&self) -> Result<(u16, Receiver<Packet>), ClientError> {
        let mut st = lock(&self.state);
        let State { ids, waiters, .. } = &mut *st;
        let pkid = ids.next(|id| waiters.contains_key(&id)).ok_or(ClientError::NoPacketIds)?;
        let (tx, rx) = mpsc::channel();
        waiters.insert(pkid, tx);
        Ok((pkid, rx))
    }

    fn release(&self, pkid: u16) {
        lock(&self.state).waiters.remove(&pkid);
    }

    /// Sends `first`, then `retry` with exponential backoff until `accept`
    /// recognises a reply.
    fn exchange(
        &self,
        first: &Packet,
        retry: &Packet,
        rx: &Receiver<Packet>,
        accept: impl Fn(&Packet) -> bool,
    ) -> Result<Packet, ClientError> {
        self.send(first)?;
        let mut wait = self.config.retry_backoff;
        let mut retries = 0;
        loop {
            let deadline = Instant::now() + wait;
            loop {
                let left = deadline.saturating_duration_since(Instant::now());
                match rx.recv_timeout(left) {
                    Ok(p) if accept(&p) => return Ok(p),
                    Ok(p) => debug!("ignoring {} while waiting", p.packet_type().name()),
                    Err(RecvTimeoutError::Timeout) => break,
                    Err(RecvTimeoutError::Disconnected) => return Err(ClientError::NotConnected),
                }
            }
            if retries == self.config.max_retries {
                return Err(ClientError::AckTimeout(retries));
            }
            retries += 1;
            self.send(retry)?;
            wait = wait.saturating_mul(2);
        }
    }

    fn stop_threads(&self) {
        *lock(&self.stopped) = true;
        self.stop_cv.notify_all();
    }
}

/// A connected MQTTg client. Dropping it disconnects.
pub struct Client {
    inner: Arc<Inner>,
    messages: Mutex<Receiver<InboundMessage>>,
    threads: Mutex<Vec<JoinHandle<()>>>,
}

fn is_timeout(e: &io::Error) -> bool {
    matches!(e.kind(), io::ErrorKind::TimedOut | io::ErrorKind::WouldBlock)
}

impl Client {
    /// Opens the TCP connection, sends CONNECT and waits for CONNACK.
    pub fn connect(config: ClientConfig) -> Result<Client, ClientError> {
        config.validate()?;
        let started = Instant::now();
        let addrs: Vec<_> = (config.host.as_str(), config.port).to_socket_addrs()?.collect();
        let mut last_err = io::Error::new(io::ErrorKind::NotFound, "host resolved to no addresses");
        let mut stream = None;
        for addr in addrs {
            let left = config.connect_timeout.saturating_sub(started.elapsed());
            if left.is_zero() {
                return Err(ClientError::ConnectTimeout);
            }
            match TcpStream::connect_timeout(&addr, left) {
                Ok(s) => {
                    stream = Some(s);
                    break;
                }
                Err(e) if is_timeout(&e) => return Err(ClientError::ConnectTimeout),
                Err(e) => last_err = e,
            }
        }
        let mut stream = stream.ok_or(last_err)?;
        stream.set_nodelay(true)?;

        let mut connect = Connect::new(config.client_id.clone(), config.keep_alive);
        connect.will = config.will.clone();
        stream.write_all(&Packet::Connect(connect).to_bytes()?)?;

        let left = config.connect_timeout.saturating_sub(started.elapsed()).max(Duration::from_millis(1));
        stream.set_read_timeout(Some(left))?;
        let mut frames = FrameReader::default();
        let connack = match frames.read(&mut stream) {
            Ok(Some(Packet::ConnAck(ack))) => ack,
            Ok(Some(p)) => return Err(ClientError::Unexpected(p.packet_type().name())),
            Ok(None) => return Err(ClientError::NotConnected),
            Err(FrameError::Io(e)) if is_timeout(&e) => return Err(ClientError::ConnectTimeout),
            Err(e) => return Err(e.into()),
        };
        if connack.code != ConnectReturnCode::Accepted {
            return Err(ClientError::ConnectionRefused(connack.code));
        }
        stream.set_read_timeout(None)?;

        let inner = Arc::new(Inner {
            writer: Mutex::new(stream.try_clone()?),
            stream: stream.try_clone()?,
            config,
            connected: AtomicBool::new(true),
            state: Mutex::new(State::default()),
            last_sent: Mutex::new(Instant::now()),
            stopped: Mutex::new(false),
            stop_cv: Condvar::new(),
        });
        let (tx, rx) = mpsc::channel();
        let reader = {
            let inner = inner.clone();
            thread::Builder::new().name("mqttg-client-read".into()).spawn(move || read_loop(inner, stream, frames, tx))?
        };
        let pinger = {
            let inner = inner.clone();
            thread::Builder::new().name("mqttg-client-ping".into()).spawn(move || ping_loop(inner))?
        };
        Ok(Client { inner, messages: Mutex::new(rx), threads: Mutex::new(vec![reader, pinger]) })
    }

    pub fn client_id(&self) -> &str {
        &self.inner.config.client_id
    }

    pub fn is_connected(&self) -> bool {
        self.inner.connected.load(Ordering::SeqCst)
    }

    /// Publishes and, for QoS 1 and 2, blocks until the flow completes.
    pub fn publish(&self, topic: &str, payload: impl Into<Vec<u8>>, qos: QoS, retain: bool) -> Result<(), ClientError> {
        validate_topic_name(topic).map_err(ClientError::InvalidTopic)?;
        if !self.is_connected() {
            return Err(ClientError::NotConnected);
        }
        let mut p = Publish::new(topic, qos, payload);
        p.retain = retain;
        p.geo = self.inner.location();
        if qos == QoS::AtMostOnce {
            return self.inner.send(&Packet::Publish(p));
        }
        let (pkid, rx) = self.inner.reserve()?;
        p.pkid = pkid;
        let result = self.publish_flow(p, &rx);
        self.inner.release(pkid);
        result
    }

    fn publish_flow(&self, p: Publish, rx: &Receiver<Packet>) -> Result<(), ClientError> {
        let pkid = p.pkid;
        let qos = p.qos;
        let first = Packet::Publish(p.clone());
        let retry = Packet::Publish(Publish { dup: true, ..p });
        if qos == QoS::AtLeastOnce {
            self.inner.exchange(&first, &retry, rx, |r| matches!(r, Packet::PubAck(_)))?;
            return Ok(());
        }
        self.inner.exchange(&first, &retry, rx, |r| matches!(r, Packet::PubRec(_)))?;
        let rel = Packet::PubRel(Ack { pkid, geo: self.inner.location() });
        self.inner.exchange(&rel, &rel, rx, |r| matches!(r, Packet::PubComp(_)))?;
        Ok(())
    }

    /// Subscribes to one filter and returns the granted QoS.
    pub fn subscribe(&self, filter: TopicFilter) -> Result<QoS, ClientError> {
        let granted = self.subscribe_many(vec![filter])?;
        Ok(granted[0])
    }

    /// Subscribes to several filters in one SUBSCRIBE. Fails with
    /// [`ClientError::SubscriptionRefused`] if any entry is refused.
    pub fn subscribe_many(&self, filters: Vec<TopicFilter>) -> Result<Vec<QoS>, ClientError> {
        if filters.is_empty() {
            return Err(ClientError::InvalidConfig("at least one filter is required"));
        }
        for f in &filters {
            validate_filter(&f.topic).map_err(ClientError::InvalidTopic)?;
            if let Some(g) = &f.geo {
                g.validate().map_err(ClientError::InvalidFilter)?;
            }
        }
        let (pkid, rx) = self.inner.reserve()?;
        let sub = Packet::Subscribe(Subscribe { pkid, geo: self.inner.location(), filters });
        let reply = self.inner.exchange(&sub, &sub, &rx, |r| matches!(r, Packet::SubAck(_)));
        self.inner.release(pkid);
        let Packet::SubAck(ack) = reply? else { unreachable!() };
        ack.codes
            .into_iter()
            .map(|c| match c {
                SubackCode::Granted(q) => Ok(q),
                SubackCode::Failure => Err(ClientError::SubscriptionRefused),
            })
            .collect()
    }

    pub fn unsubscribe(&self, topic: &str) -> Result<(), ClientError> {
        validate_filter(topic).map_err(ClientError::InvalidTopic)?;
        let (pkid, rx) = self.inner.reserve()?;
        let unsub = Packet::Unsubscribe(Unsubscribe { pkid, geo: self.inner.location(), topics: vec![topic.into()] });
        let reply = self.inner.exchange(&unsub, &unsub, &rx, |r| matches!(r, Packet::UnsubAck(_)));
        self.inner.release(pkid);
        reply.map(drop)
    }

    /// Sends PINGREQ and waits up to `timeout` for PINGRESP.
    pub fn ping(&self, timeout: Duration) -> Result<(), ClientError> {
        let (tx, rx) = mpsc::channel();
        lock(&self.inner.state).pings.push(tx);
        self.inner.send(&Packet::PingReq(self.inner.location()))?;
        match rx.recv_timeout(timeout) {
            Ok(()) => Ok(()),
            Err(RecvTimeoutError::Timeout) => Err(ClientError::AckTimeout(0)),
            Err(RecvTimeoutError::Disconnected) => Err(ClientError::NotConnected),
        }
    }

    pub fn recv(&self) -> Option<InboundMessage> {
        lock(&self.messages).recv().ok()
    }

    pub fn recv_timeout(&self, timeout: Duration) -> Option<InboundMessage> {
        lock(&self.messages).recv_timeout(timeout).ok()
    }

    pub fn try_recv(&self) -> Option<InboundMessage> {
        lock(&self.messages).try_recv().ok()
    }

    /// Sends DISCONNECT and closes the socket. Safe to call more than once.
    pub fn disconnect(&self) -> Result<(), ClientError> {
        let sent = if self.inner.connected.load(Ordering::SeqCst) {
            let r = self.inner.send(&Packet::Disconnect(self.inner.location()));
            self.inner.connected.store(false, Ordering::SeqCst);
            r
        } else {
            Ok(())
        };
        self.inner.stop_threads();
        let _ = self.inner.stream.shutdown(Shutdown::Both);
        for t in lock(&self.threads).drain(..) {
            let _ = t.join();
        }
        match sent {
            Err(ClientError::NotConnected) => Ok(()),
            other => other,
        }
    }
}

impl Drop for Client {
    fn drop(&mut self) {
        let _ = self.disconnect();
    }
}

fn read_loop(inner: Arc<Inner>, mut stream: TcpStream, mut frames: FrameReader, tx: Sender<InboundMessage>) {
    loop {
        let packet = match frames.read(&mut stream) {
            Ok(Some(p)) => p,
            Ok(None) => break,
            Err(e) => {
                debug!("client read: {e}");
                break;
            }
        };
        if let Err(e) = handle_inbound(&inner, packet, &tx) {
            debug!("client: {e}");
            break;
        }
    }
    inner.connected.store(false, Ordering::SeqCst);
    let _ = inner.stream.shutdown(Shutdown::Both);
    let mut st = lock(&inner.state);
    st.waiters.clear();
    st.pings.clear();
    drop(st);
    inner.stop_threads();
}

fn handle_inbound(inner: &Inner, packet: Packet, tx: &Sender<InboundMessage>) -> Result<(), ClientError> {
    let deliver = |p: Publish| {
        let _ = tx.send(InboundMessage {
            topic: p.topic,
            payload: p.payload,
            qos: p.qos,
            retain: p.retain,
            publisher_geolocation: p.geo,
        });
    };
    match packet {
        Packet::Publish(p) => match p.qos {
            QoS::AtMostOnce => deliver(p),
            QoS::AtLeastOnce => {
                let pkid = p.pkid;
                deliver(p);
                inner.ack(Packet::PubAck, pkid)?;
            }
            QoS::ExactlyOnce => {
                let pkid = p.pkid;
                if lock(&inner.state).inbound_qos2.insert(pkid) {
                    deliver(p);
                }
                inner.ack(Packet::PubRec, pkid)?;
            }
        },
        Packet::PubRel(a) => {
            lock(&inner.state).inbound_qos2.remove(&a.pkid);
            inner.ack(Packet::PubComp, a.pkid)?;
        }
        Packet::PubAck(Ack { pkid, .. })
        | Packet::PubRec(Ack { pkid, .. })
        | Packet::PubComp(Ack { pkid, .. })
        | Packet::SubAck(mqttg_core::SubAck { pkid, .. })
        | Packet::UnsubAck(pkid) => {
            let st = lock(&inner.state);
            match st.waiters.get(&pkid) {
                Some(w) => {
                    let _ = w.send(packet);
                }
                None => debug!("unsolicited {} for packet id {pkid}", packet.packet_type().name()),
            }
        }
        Packet::PingResp => {
            for p in lock(&inner.state).pings.drain(..) {
                let _ = p.send(());
            }
        }
        other => return Err(ClientError::Unexpected(other.packet_type().name())),
    }
    Ok(())
}

fn ping_loop(inner: Arc<Inner>) {
    let period = Duration::from_secs(u64::from(inner.config.keep_alive)) / 2;
    let mut stopped = lock(&inner.stopped);
    while !*stopped {
        let idle = lock(&inner.last_sent).elapsed();
        if idle >= period {
            drop(stopped);
            if inner.send(&Packet::PingReq(inner.location())).is_err() {
                return;
            }
            stopped = lock(&inner.stopped);
            continue;
        }
        stopped = inner.stop_cv.wait_timeout(stopped, period - idle).unwrap_or_else(|e| e.into_inner()).0;
    }
}
