//! TCP front end for [`mqttg_core::Broker`].
//!
//! Each connection gets a reader thread that decodes packets and feeds the
//! shared state machine, and a writer thread that drains an outgoing queue so
//! a slow socket never blocks the broker lock.

use std::collections::HashMap;
use std::io::{self, BufRead, BufReader, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, Sender};
use std::sync::{Arc, Mutex, MutexGuard};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use log::{debug, info, warn};
use mqttg_core::{Action, Broker, ConnId, Packet};

use crate::admin;
use crate::eventlog::EventLog;
use crate::fences::FenceSpec;
use crate::framing::{FrameReader, DEFAULT_MAX_PACKET};

pub const DEFAULT_PORT: u16 = 1883;

pub struct BrokerConfig {
    pub bind: SocketAddr,
    /// Admin socket; disabled when `None`.
    pub admin: Option<SocketAddr>,
    pub fences: Vec<FenceSpec>,
    pub log: EventLog,
    /// How long a new socket may take to send CONNECT.
    pub connect_timeout: Duration,
    pub max_packet: usize,
}

impl Default for BrokerConfig {
    fn default() -> Self {
        BrokerConfig {
            bind: SocketAddr::from(([0, 0, 0, 0], DEFAULT_PORT)),
            admin: None,
            fences: Vec::new(),
            log: EventLog::new(),
            connect_timeout: Duration::from_secs(10),
            max_packet: DEFAULT_MAX_PACKET,
        }
    }
}

impl BrokerConfig {
    /// Loopback broker on ephemeral ports with an admin socket; handy for
    /// tests and local experiments.
    pub fn local() -> Self {
        BrokerConfig {
            bind: SocketAddr::from(([127, 0, 0, 1], 0)),
            admin: Some(SocketAddr::from(([127, 0, 0, 1], 0))),
            ..BrokerConfig::default()
        }
    }
}

enum Outgoing {
    Bytes(Vec<u8>),
    Close,
}

struct Conn {
    tx: Sender<Outgoing>,
    stream: TcpStream,
}

struct Shared {
    broker: Mutex<Broker>,
    conns: Mutex<HashMap<ConnId, Conn>>,
    log: Mutex<EventLog>,
    epoch: Instant,
    next_conn: AtomicU64,
    stopping: AtomicBool,
    connect_timeout: Duration,
    max_packet: usize,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

impl Shared {
    fn now(&self) -> f64 {
        self.epoch.elapsed().as_secs_f64()
    }

    /// Performs broker actions. Call with the broker lock held so that
    /// outgoing packets are queued in the order the state machine made them.
    fn apply(&self, actions: Vec<Action>) {
        let conns = lock(&self.conns);
        for action in actions {
            match action {
                Action::Send { conn, packet } => match (conns.get(&conn), packet.to_bytes()) {
                    (Some(c), Ok(bytes)) => {
                        let _ = c.tx.send(Outgoing::Bytes(bytes));
                    }
                    (None, _) => debug!("dropping packet for closed connection {conn}"),
                    (_, Err(e)) => warn!("cannot encode outgoing packet: {e}"),
                },
                Action::Close { conn } => {
                    if let Some(c) = conns.get(&conn) {
                        let _ = c.tx.send(Outgoing::Close);
                    }
                }
                Action::Log(event) => {
                    if let Err(e) = lock(&self.log).emit(&event) {
                        warn!("event log write failed: {e}");
                    }
                }
            }
        }
    }
}

/// A running broker. Dropping the handle shuts it down.
pub struct BrokerHandle {
    shared: Arc<Shared>,
    addr: SocketAddr,
    admin_addr: Option<SocketAddr>,
    threads: Vec<JoinHandle<()>>,
}

/// Binds the listeners, installs configured fences and starts serving.
pub fn start(config: BrokerConfig) -> io::Result<BrokerHandle> {
    let mut broker = Broker::new();
    for f in config.fences {
        broker
            .register_polygon(&f.owner, &f.topic, f.polygon)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e.to_string()))?;
    }
    let listener = TcpListener::bind(config.bind)?;
    let addr = listener.local_addr()?;
    let admin = config.admin.map(TcpListener::bind).transpose()?;
    let admin_addr = admin.as_ref().map(TcpListener::local_addr).transpose()?;

    let shared = Arc::new(Shared {
        broker: Mutex::new(broker),
        conns: Mutex::new(HashMap::new()),
        log: Mutex::new(config.log),
        epoch: Instant::now(),
        next_conn: AtomicU64::new(1),
        stopping: AtomicBool::new(false),
        connect_timeout: config.connect_timeout,
        max_packet: config.max_packet,
    });

    let mut threads = Vec::new();
    let s = shared.clone();
    threads.push(thread::Builder::new().name("mqttg-accept".into()).spawn(move || accept_loop(s, listener))?);
    if let Some(admin) = admin {
        let s = shared.clone();
        threads.push(thread::Builder::new().name("mqttg-admin".into()).spawn(move || admin_loop(s, admin))?);
    }
    info!("listening on {addr}");
    if let Some(a) = admin_addr {
        info!("admin socket on {a}");
    }
    Ok(BrokerHandle { shared, addr, admin_addr, threads })
}

impl BrokerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn admin_addr(&self) -> Option<SocketAddr> {
        self.admin_addr
    }

    /// Runs `f` with the broker state locked.
    pub fn with_broker<R>(&self, f: impl FnOnce(&mut Broker) -> R) -> R {
        f(&mut lock(&self.shared.broker))
    }

    /// Blocks until the listener threads exit.
    pub fn wait(mut self) {
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        if self.shared.stopping.swap(true, Ordering::SeqCst) {
            return;
        }
        // Wake the blocking accept calls.
        for a in [Some(self.addr), self.admin_addr].into_iter().flatten() {
            let _ = TcpStream::connect(wake_addr(a));
        }
        for c in lock(&self.shared.conns).values() {
            let _ = c.stream.shutdown(Shutdown::Both);
        }
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

impl Drop for BrokerHandle {
    fn drop(&mut self) {
        self.stop();
    }
}

fn wake_addr(a: SocketAddr) -> SocketAddr {
    if a.ip().is_unspecified() {
        SocketAddr::new(if a.is_ipv4() { [127, 0, 0, 1].into() } else { std::net::Ipv6Addr::LOCALHOST.into() }, a.port())
    } else {
        a
    }
}

fn accept_loop(shared: Arc<Shared>, listener: TcpListener) {
    for stream in listener.incoming() {
        if shared.stopping.load(Ordering::SeqCst) {
            break;
        }
        let stream = match stream {
            Ok(s) => s,
            Err(e) => {
                warn!("accept failed: {e}");
                continue;
            }
        };
        let s = shared.clone();
        let spawned = thread::Builder::new().name("mqttg-conn".into()).spawn(move || {
            if let Err(e) = serve(&s, stream) {
                debug!("connection setup failed: {e}");
            }
        });
        if let Err(e) = spawned {
            warn!("cannot spawn connection thread: {e}");
        }
    }
}

fn serve(shared: &Shared, mut stream: TcpStream) -> io::Result<()> {
    let conn = shared.next_conn.fetch_add(1, Ordering::SeqCst);
    let peer = stream.peer_addr()?;
    stream.set_nodelay(true)?;
    let (tx, rx) = mpsc::channel();
    let mut out = stream.try_clone()?;
    let writer = thread::Builder::new().name("mqttg-write".into()).spawn(move || {
        for msg in rx {
            match msg {
                Outgoing::Bytes(b) => {
                    if out.write_all(&b).is_err() {
                        break;
                    }
                }
                Outgoing::Close => break,
            }
        }
        let _ = out.shutdown(Shutdown::Both);
    })?;
    lock(&shared.conns).insert(conn, Conn { tx: tx.clone(), stream: stream.try_clone()? });
    debug!("connection {conn} from {peer}");

    stream.set_read_timeout(Some(shared.connect_timeout))?;
    let mut frames = FrameReader::new(shared.max_packet);
    loop {
        if shared.stopping.load(Ordering::SeqCst) {
            break;
        }
        let packet = match frames.read(&mut stream) {
            Ok(Some(p)) => p,
            Ok(None) => break,
            Err(e) => {
                debug!("connection {conn}: {e}");
                break;
            }
        };
        if let Packet::Connect(c) = &packet {
            // Allow one and a half keep-alive periods of silence.
            let timeout = (c.keep_alive > 0).then(|| Duration::from_millis(u64::from(c.keep_alive) * 1500));
            stream.set_read_timeout(timeout)?;
        }
        let mut broker = lock(&shared.broker);
        match broker.on_packet(conn, packet, shared.now()) {
            Ok(actions) => shared.apply(actions),
            Err(e) => {
                warn!("connection {conn} from {peer}: {e}");
                break;
            }
        }
    }

    {
        let mut broker = lock(&shared.broker);
        let actions = broker.connection_lost(conn, shared.now());
        shared.apply(actions);
        lock(&shared.conns).remove(&conn);
    }
    let _ = tx.send(Outgoing::Close);
    let _ = writer.join();
    debug!("connection {conn} closed");
    Ok(())
}

fn admin_loop(shared: Arc<Shared>, listener: TcpListener) {
    for stream in listener.incoming() {
        if shared.stopping.load(Ordering::SeqCst) {
            break;
        }
        let Ok(stream) = stream else { continue };
        let s = shared.clone();
        let _ = thread::Builder::new().name("mqttg-admin-conn".into()).spawn(move || {
            if let Err(e) = serve_admin(&s, stream) {
                debug!("admin connection: {e}");
            }
        });
    }
}

fn serve_admin(shared: &Shared, stream: TcpStream) -> io::Result<()> {
    let mut out = stream.try_clone()?;
    for line in BufReader::new(stream).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = admin::handle_line(&mut lock(&shared.broker), &line);
        out.write_all(reply.as_bytes())?;
        if shared.stopping.load(Ordering::SeqCst) {
            break;
        }
    }
    Ok(())
}
