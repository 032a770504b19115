//! Broker state machine.
//!
//! [`Broker::on_packet`] takes a decoded packet from a connection plus the
//! current time and returns the [`Action`]s to carry out: packets to send,
//! connections to close, events to log. The caller owns sockets, clocks and
//! locking; this type only owns state.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};
use crate::event::{Event, EventKind};
use crate::geo::GeoLocation;
use crate::geometry::{
    haversine_distance, point_in_polygon, resolve_polygon, GeoPoint, GeofencePolygon, GeometryError,
};
use crate::packet::{
    Ack, ConnAck, Connect, ConnectReturnCode, LastWill, Packet, Publish, QoS, SubAck, SubackCode,
    TopicFilter,
};
use crate::pkid::PacketIds;
use crate::topic::{self, TopicError};

/// Identifies one network connection. Assigned by the caller.
pub type ConnId = u64;

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Send { conn: ConnId, packet: Packet },
    Close { conn: ConnId },
    Log(Event),
}

/// Last known location of a client plus distance and speed tracking.
#[derive(Debug, Clone, PartialEq)]
pub struct LocationRecord {
    pub client_id: String,
    pub location: GeoLocation,
    /// Broker clock, seconds.
    pub received_at: f64,
    /// Meters travelled over all fixes so far.
    pub cumulative_distance: f64,
    /// Meters between the previous fix and this one.
    pub last_segment: Option<f64>,
    /// km/h over the last segment; absent on the first fix or when the clock
    /// did not advance.
    pub last_speed_kmh: Option<f64>,
    /// Number of fixes recorded.
    pub fixes: u64,
}

impl LocationRecord {
    pub fn point(&self) -> GeoPoint {
        self.location.point()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LocationError {
    UnsupportedVersion(u8),
    InvalidCoordinates,
}

impl fmt::Display for LocationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LocationError::UnsupportedVersion(v) => write!(f, "geolocation version {v} is not evaluable"),
            LocationError::InvalidCoordinates => f.write_str("invalid coordinates"),
        }
    }
}

/// Client id → last known location.
#[derive(Debug, Clone, Default)]
pub struct LocationTable {
    records: BTreeMap<String, LocationRecord>,
}

impl LocationTable {
    /// Records a fix, accumulating the great-circle segment from the previous one.
    pub fn update(
        &mut self,
        client_id: &str,
        location: GeoLocation,
        now: f64,
    ) -> core::result::Result<&LocationRecord, LocationError> {
        if !location.is_evaluable() {
            return Err(LocationError::UnsupportedVersion(location.version));
        }
        location.validate().map_err(|_| LocationError::InvalidCoordinates)?;
        let record = match self.records.get(client_id) {
            None => LocationRecord {
                client_id: client_id.to_string(),
                location,
                received_at: now,
                cumulative_distance: 0.0,
                last_segment: None,
                last_speed_kmh: None,
                fixes: 1,
            },
            Some(prior) => {
                let segment = haversine_distance(prior.point(), location.point());
                let elapsed = now - prior.received_at;
                LocationRecord {
                    client_id: client_id.to_string(),
                    location,
                    received_at: now,
                    cumulative_distance: prior.cumulative_distance + segment,
                    last_segment: Some(segment),
                    last_speed_kmh: (elapsed > 0.0).then(|| segment / elapsed * 3.6),
                    fixes: prior.fixes + 1,
                }
            }
        };
        self.records.insert(client_id.to_string(), record);
        Ok(&self.records[client_id])
    }

    pub fn get(&self, client_id: &str) -> Option<&LocationRecord> {
        self.records.get(client_id)
    }

    pub fn point_of(&self, client_id: &str) -> Option<GeoPoint> {
        self.get(client_id).map(LocationRecord::point)
    }

    pub fn iter(&self) -> impl Iterator<Item = &LocationRecord> {
        self.records.values()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Subscription {
    pub filter: TopicFilter,
    pub granted: QoS,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
/// Which ack an outbound delivery is waiting for.
enum Outbound {
    Ack,
    Rec,
    Comp,
}

#[derive(Debug, Clone)]
pub struct Session {
    pub client_id: String,
    pub conn: ConnId,
    pub keep_alive: u16,
    pub subscriptions: Vec<Subscription>,
    /// Set once the client has sent any geo-flagged packet.
    pub geo_capable: bool,
    will: Option<LastWill>,
    inbound_qos2: BTreeSet<u16>,
    outbound: BTreeMap<u16, Outbound>,
    pkids: PacketIds,
}

impl Session {
    fn new(client_id: String, conn: ConnId, connect: &Connect) -> Self {
        Session {
            client_id,
            conn,
            keep_alive: connect.keep_alive,
            subscriptions: Vec::new(),
            geo_capable: false,
            will: connect.will.clone(),
            inbound_qos2: BTreeSet::new(),
            outbound: BTreeMap::new(),
            pkids: PacketIds::default(),
        }
    }

    /// Outbound QoS 1/2 deliveries not yet completed.
    pub fn inflight(&self) -> usize {
        self.outbound.len()
    }

    fn next_pkid(&mut self) -> Option<u16> {
        let outbound = &self.outbound;
        self.pkids.next(|id| outbound.contains_key(&id))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FenceEntry {
    /// Topic filter string the fence applies to, compared verbatim with
    /// the owner's subscription filters.
    pub topic: String,
    pub polygon: GeofencePolygon,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FenceError {
    Topic(TopicError),
    Geometry(GeometryError),
}

impl fmt::Display for FenceError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FenceError::Topic(e) => write!(f, "bad topic filter: {e}"),
            FenceError::Geometry(e) => write!(f, "bad polygon: {e}"),
        }
    }
}

impl core::error::Error for FenceError {}

/// Polygon fences per owning client.
#[derive(Debug, Clone, Default)]
pub struct GeofenceRegistry {
    fences: BTreeMap<String, Vec<FenceEntry>>,
}

impl GeofenceRegistry {
    pub fn register(
        &mut self,
        owner: &str,
        topic: &str,
        polygon: GeofencePolygon,
    ) -> core::result::Result<(), FenceError> {
        topic::validate_filter(topic).map_err(FenceError::Topic)?;
        polygon.validate().map_err(FenceError::Geometry)?;
        self.fences
            .entry(owner.to_string())
            .or_default()
            .push(FenceEntry { topic: topic.to_string(), polygon });
        Ok(())
    }

    /// Removes every fence `owner` holds for `topic`; returns how many.
    pub fn clear(&mut self, owner: &str, topic: &str) -> usize {
        let Some(list) = self.fences.get_mut(owner) else {
            return 0;
        };
        let before = list.len();
        list.retain(|f| f.topic != topic);
        let removed = before - list.len();
        if list.is_empty() {
            self.fences.remove(owner);
        }
        removed
    }

    pub fn for_topic<'a>(&'a self, owner: &str, topic: &'a str) -> impl Iterator<Item = &'a GeofencePolygon> {
        self.fences
            .get(owner)
            .into_iter()
            .flatten()
            .filter(move |f| f.topic == topic)
            .map(|f| &f.polygon)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &FenceEntry)> {
        self.fences.iter().flat_map(|(o, l)| l.iter().map(move |f| (o.as_str(), f)))
    }
}

/// One delivery decided by routing.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct RouteTarget {
    pub client_id: String,
    pub conn: ConnId,
    pub qos: QoS,
    /// Deliver as PUBLISHG with the geolocation block intact.
    pub with_geo: bool,
}

#[derive(Debug, Default)]
pub struct Broker {
    sessions: BTreeMap<String, Session>,
    conns: BTreeMap<ConnId, String>,
    locations: LocationTable,
    fences: GeofenceRegistry,
    retained: BTreeMap<String, Publish>,
    auto_ids: u64,
}

impl Broker {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn locations(&self) -> &LocationTable {
        &self.locations
    }

    pub fn fences(&self) -> &GeofenceRegistry {
        &self.fences
    }

    pub fn session(&self, client_id: &str) -> Option<&Session> {
        self.sessions.get(client_id)
    }

    pub fn sessions(&self) -> impl Iterator<Item = &Session> {
        self.sessions.values()
    }

    pub fn client_of(&self, conn: ConnId) -> Option<&str> {
        self.conns.get(&conn).map(String::as_str)
    }

    pub fn retained(&self, topic: &str) -> Option<&Publish> {
        self.retained.get(topic)
    }

    pub fn update_last_location(
        &mut self,
        client_id: &str,
        location: GeoLocation,
        now: f64,
    ) -> core::result::Result<&LocationRecord, LocationError> {
        self.locations.update(client_id, location, now)
    }

    pub fn register_polygon(
        &mut self,
        owner: &str,
        topic: &str,
        polygon: GeofencePolygon,
    ) -> core::result::Result<(), FenceError> {
        self.fences.register(owner, topic, polygon)
    }

    pub fn clear_polygons(&mut self, owner: &str, topic: &str) -> usize {
        self.fences.clear(owner, topic)
    }

    /// Handles one packet received on `conn`.
    ///
    /// An `Err` means the connection broke protocol: the caller should close
    /// it and then call [`Broker::connection_lost`].
    pub fn on_packet(&mut self, conn: ConnId, packet: Packet, now: f64) -> Result<Vec<Action>> {
        let mut actions = Vec::new();
        match self.conns.get(&conn).cloned() {
            None => match packet {
                Packet::Connect(c) => self.on_connect(conn, c, now, &mut actions),
                _ => return Err(Error::ProtocolViolation("first packet must be CONNECT")),
            },
            Some(client_id) => self.on_session_packet(&client_id, packet, now, &mut actions)?,
        }
        Ok(actions)
    }

    /// The connection went away without a DISCONNECT (socket error, keep-alive
    /// expiry, protocol violation). Publishes the will, if any.
    pub fn connection_lost(&mut self, conn: ConnId, now: f64) -> Vec<Action> {
        let mut actions = Vec::new();
        if let Some(client_id) = self.conns.remove(&conn) {
            if let Some(session) = self.sessions.remove(&client_id) {
                self.drop_session(session, now, &mut actions);
            }
        }
        actions
    }

    fn drop_session(&mut self, session: Session, now: f64, actions: &mut Vec<Action>) {
        actions.push(Action::Log(Event {
            timestamp: now,
            client_id: session.client_id.clone(),
            kind: EventKind::ConnectionLost,
            location: None,
            distance_m: self.locations.get(&session.client_id).map(|r| r.cumulative_distance),
            speed_kmh: None,
        }));
        if let Some(will) = session.will {
            let mut p = Publish::new(will.topic, will.qos, will.message);
            p.retain = will.retain;
            if p.retain {
                self.store_retained(&p);
            }
            self.route_publish(&p, actions);
        }
    }

    fn on_connect(&mut self, conn: ConnId, connect: Connect, now: f64, actions: &mut Vec<Action>) {
        let refuse = |code, actions: &mut Vec<Action>| {
            actions.push(Action::Send {
                conn,
                packet: Packet::ConnAck(ConnAck { session_present: false, code }),
            });
            actions.push(Action::Close { conn });
        };
        if connect.protocol_level != 4 {
            return refuse(ConnectReturnCode::UnacceptableProtocolVersion, actions);
        }
        let client_id = if connect.client_id.is_empty() {
            if !connect.clean_session {
                return refuse(ConnectReturnCode::IdentifierRejected, actions);
            }
            self.auto_ids += 1;
            format!("auto-{}", self.auto_ids)
        } else {
            connect.client_id.clone()
        };

        if let Some(old) = self.sessions.remove(&client_id) {
            self.conns.remove(&old.conn);
            actions.push(Action::Close { conn: old.conn });
            self.drop_session(old, now, actions);
        }

        self.sessions.insert(client_id.clone(), Session::new(client_id.clone(), conn, &connect));
        self.conns.insert(conn, client_id.clone());
        actions.push(Action::Send {
            conn,
            packet: Packet::ConnAck(ConnAck { session_present: false, code: ConnectReturnCode::Accepted }),
        });
        actions.push(Action::Log(Event {
            timestamp: now,
            client_id,
            kind: EventKind::Connect,
            location: None,
            distance_m: None,
            speed_kmh: None,
        }));
    }

    fn on_session_packet(
        &mut self,
        client_id: &str,
        packet: Packet,
        now: f64,
        actions: &mut Vec<Action>,
    ) -> Result<()> {
        let conn = self.sessions[client_id].conn;

        // The location table must reflect this packet before anything it triggers.
        let mut fix = None;
        if let Some(g) = packet.geolocation().copied() {
            self.sessions.get_mut(client_id).unwrap().geo_capable = true;
            fix = self.locations.update(client_id, g, now).ok().cloned();
        }
        let log = |kind, actions: &mut Vec<Action>| {
            actions.push(Action::Log(Event {
                timestamp: now,
                client_id: client_id.to_string(),
                kind,
                location: packet.geolocation().copied(),
                distance_m: fix.as_ref().and_then(|r| r.last_segment),
                speed_kmh: fix.as_ref().and_then(|r| r.last_speed_kmh),
            }))
        };

        match &packet {
            Packet::Publish(p) => {
                topic::validate_topic_name(&p.topic)
                    .map_err(|_| Error::ProtocolViolation("invalid topic name in PUBLISH"))?;
                log(EventKind::Packet(p.packet_type()), actions);
                self.on_publish(client_id, conn, p, actions);
            }
            Packet::PubAck(a) => {
                let session = self.sessions.get_mut(client_id).unwrap();
                if session.outbound.get(&a.pkid) == Some(&Outbound::Ack) {
                    session.outbound.remove(&a.pkid);
                }
            }
            Packet::PubRec(a) => {
                let session = self.sessions.get_mut(client_id).unwrap();
                if let Some(state) = session.outbound.get_mut(&a.pkid) {
                    *state = Outbound::Comp;
                }
                actions.push(Action::Send { conn, packet: Packet::PubRel(Ack::new(a.pkid)) });
            }
            Packet::PubRel(a) => {
                self.sessions.get_mut(client_id).unwrap().inbound_qos2.remove(&a.pkid);
                actions.push(Action::Send { conn, packet: Packet::PubComp(Ack::new(a.pkid)) });
            }
            Packet::PubComp(a) => {
                let session = self.sessions.get_mut(client_id).unwrap();
                if session.outbound.get(&a.pkid) == Some(&Outbound::Comp) {
                    session.outbound.remove(&a.pkid);
                }
            }
            Packet::Subscribe(s) => {
                let codes = self.register_subscription(client_id, &s.filters);
                actions.push(Action::Send {
                    conn,
                    packet: Packet::SubAck(SubAck { pkid: s.pkid, codes: codes.clone() }),
                });
                for (filter, code) in s.filters.iter().zip(codes) {
                    if let SubackCode::Granted(granted) = code {
                        self.send_retained(client_id, filter, granted, actions);
                    }
                }
            }
            Packet::Unsubscribe(u) => {
                let session = self.sessions.get_mut(client_id).unwrap();
                session.subscriptions.retain(|s| !u.topics.contains(&s.filter.topic));
                for t in &u.topics {
                    self.fences.clear(client_id, t);
                }
                actions.push(Action::Send { conn, packet: Packet::UnsubAck(u.pkid) });
            }
            Packet::PingReq(_) => {
                actions.push(Action::Send { conn, packet: Packet::PingResp });
            }
            Packet::Disconnect(g) => {
                actions.push(Action::Log(Event {
                    timestamp: now,
                    client_id: client_id.to_string(),
                    kind: EventKind::Disconnect,
                    location: *g,
                    distance_m: self.locations.get(client_id).map(|r| r.cumulative_distance),
                    speed_kmh: fix.as_ref().and_then(|r| r.last_speed_kmh),
                }));
                self.sessions.remove(client_id);
                self.conns.remove(&conn);
                actions.push(Action::Close { conn });
                return Ok(());
            }
            Packet::Connect(_) => return Err(Error::ProtocolViolation("second CONNECT")),
            Packet::ConnAck(_) | Packet::SubAck(_) | Packet::UnsubAck(_) | Packet::PingResp => {
                return Err(Error::ProtocolViolation("server-to-client packet received from client"));
            }
        }
        if packet.geolocation().is_some() && !matches!(packet, Packet::Publish(_)) {
            log(EventKind::Packet(packet.packet_type()), actions);
        }
        Ok(())
    }

    fn on_publish(&mut self, client_id: &str, conn: ConnId, p: &Publish, actions: &mut Vec<Action>) {
        if p.retain {
            self.store_retained(p);
        }
        match p.qos {
            QoS::AtMostOnce => self.route_publish(p, actions),
            QoS::AtLeastOnce => {
                actions.push(Action::Send { conn, packet: Packet::PubAck(Ack::new(p.pkid)) });
                self.route_publish(p, actions);
            }
            QoS::ExactlyOnce => {
                actions.push(Action::Send { conn, packet: Packet::PubRec(Ack::new(p.pkid)) });
                let first_time = self.sessions.get_mut(client_id).unwrap().inbound_qos2.insert(p.pkid);
                if first_time {
                    self.route_publish(p, actions);
                }
            }
        }
    }

    /// Retained copies never carry geolocation.
    fn store_retained(&mut self, p: &Publish) {
        if p.payload.is_empty() {
            self.retained.remove(&p.topic);
        } else {
            let mut kept = p.clone();
            kept.geo = None;
            kept.dup = false;
            kept.pkid = 0;
            self.retained.insert(p.topic.clone(), kept);
        }
    }

    /// Stores each filter, replacing a same-topic filter, and returns the grant codes.
    pub fn register_subscription(&mut self, client_id: &str, filters: &[TopicFilter]) -> Vec<SubackCode> {
        let Some(session) = self.sessions.get_mut(client_id) else {
            return filters.iter().map(|_| SubackCode::Failure).collect();
        };
        filters
            .iter()
            .map(|f| {
                let valid = topic::validate_filter(&f.topic).is_ok()
                    && f.geo.as_ref().is_none_or(|c| c.validate().is_ok());
                if !valid {
                    return SubackCode::Failure;
                }
                let sub = Subscription { filter: f.clone(), granted: f.qos };
                match session.subscriptions.iter_mut().find(|s| s.filter.topic == f.topic) {
                    Some(existing) => *existing = sub,
                    None => session.subscriptions.push(sub),
                }
                SubackCode::Granted(f.qos)
            })
            .collect()
    }

    fn send_retained(&mut self, client_id: &str, filter: &TopicFilter, granted: QoS, actions: &mut Vec<Action>) {
        let matching: Vec<Publish> = self
            .retained
            .values()
            .filter(|r| topic::matches(&filter.topic, &r.topic))
            .filter(|r| geo_admits(filter, r) && self.fences_admit(client_id, &filter.topic))
            .cloned()
            .collect();
        for mut p in matching {
            p.qos = p.qos.min(granted);
            p.retain = true;
            self.deliver(client_id, p, actions);
        }
    }

    fn deliver(&mut self, client_id: &str, mut p: Publish, actions: &mut Vec<Action>) {
        let session = self.sessions.get_mut(client_id).unwrap();
        p.dup = false;
        p.pkid = 0;
        if p.qos != QoS::AtMostOnce {
            // Every identifier in flight: drop rather than reuse one.
            let Some(id) = session.next_pkid() else { return };
            p.pkid = id;
            let state = if p.qos == QoS::AtLeastOnce { Outbound::Ack } else { Outbound::Rec };
            session.outbound.insert(id, state);
        }
        actions.push(Action::Send { conn: session.conn, packet: Packet::Publish(p) });
    }

    fn route_publish(&mut self, p: &Publish, actions: &mut Vec<Action>) {
        for target in self.plan_route(p) {
            let mut out = p.clone();
            out.qos = target.qos;
            out.retain = false;
            if !target.with_geo {
                out.geo = None;
            }
            self.deliver(&target.client_id, out, actions);
        }
    }

    /// Who receives `p`, at which QoS, and in which form. Pure with respect
    /// to broker state.
    ///
    /// A session receives the publish once if any of its topic-matching
    /// subscriptions passes both its radius constraint and every polygon fence
    /// the session registered for that filter. QoS is the publish QoS capped
    /// by the highest grant among the passing subscriptions.
    pub fn plan_route(&self, p: &Publish) -> Vec<RouteTarget> {
        let mut targets = Vec::new();
        for session in self.sessions.values() {
            let mut best: Option<QoS> = None;
            let mut geo_filtered = false;
            for sub in &session.subscriptions {
                if !topic::matches(&sub.filter.topic, &p.topic)
                    || !geo_admits(&sub.filter, p)
                    || !self.fences_admit(&session.client_id, &sub.filter.topic)
                {
                    continue;
                }
                best = Some(best.map_or(sub.granted, |q| q.max(sub.granted)));
                geo_filtered |= sub.filter.geo.is_some();
            }
            if let Some(granted) = best {
                targets.push(RouteTarget {
                    client_id: session.client_id.clone(),
                    conn: session.conn,
                    qos: p.qos.min(granted),
                    with_geo: p.geo.is_some() && (session.geo_capable || geo_filtered),
                });
            }
        }
        targets
    }

    /// Every fence `owner` holds for `filter` must contain the owner's own last
    /// known location. Unknown locations and unknown anchors fail closed.
    fn fences_admit(&self, owner: &str, filter: &str) -> bool {
        let mut fences = self.fences.for_topic(owner, filter).peekable();
        if fences.peek().is_none() {
            return true;
        }
        let Some(own) = self.locations.point_of(owner) else {
            return false;
        };
        fences.all(|poly| {
            let anchor = poly.anchor().and_then(|a| self.locations.point_of(a));
            match resolve_polygon(poly, anchor) {
                Ok(vertices) => point_in_polygon(own, &vertices),
                Err(_) => false,
            }
        })
    }
}

/// Radius constraint check. Publishes without an evaluable geolocation never
/// satisfy a constrained filter.
fn geo_admits(filter: &TopicFilter, p: &Publish) -> bool {
    match &filter.geo {
        None => true,
        Some(c) => match &p.geo {
            Some(g) if g.is_evaluable() => c.admits(g.point()),
            _ => false,
        },
    }
}
