//! MQTT 3.1.1 control packets with the geolocation extensions.
//!
//! Multi-byte integers and string lengths are big-endian as in plain MQTT.
//! Geolocation blocks and radius constraints are little-endian.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geo::{coordinates_valid, GeoLocation, GEO_BLOCK_LEN};
use crate::geometry::{inside_radius, GeoPoint};
use crate::varint::{decode_remaining_length, encode_remaining_length, remaining_length_len};

/// Fixed-header flag bit announcing a geolocation block on non-publish packets.
pub const GEO_FLAG: u8 = 0x04;

/// Bit in a SUBSCRIBE entry's options byte announcing a radius constraint.
pub const GEO_FILTER_FLAG: u8 = 0x04;

/// Bytes a radius constraint adds to a SUBSCRIBE entry: kind, radius, latitude, longitude.
pub const GEO_FILTER_LEN: usize = 1 + 4 + 8 + 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
#[repr(u8)]
pub enum QoS {
    #[default]
    AtMostOnce = 0,
    AtLeastOnce = 1,
    ExactlyOnce = 2,
}

impl QoS {
    pub fn from_u8(v: u8) -> Option<QoS> {
        match v {
            0 => Some(QoS::AtMostOnce),
            1 => Some(QoS::AtLeastOnce),
            2 => Some(QoS::ExactlyOnce),
            _ => None,
        }
    }
}

/// High nibble of the first fixed-header byte.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[repr(u8)]
pub enum PacketType {
    Connect = 1,
    ConnAck = 2,
    Publish = 3,
    PubAck = 4,
    PubRec = 5,
    PubRel = 6,
    PubComp = 7,
    Subscribe = 8,
    SubAck = 9,
    Unsubscribe = 10,
    UnsubAck = 11,
    PingReq = 12,
    PingResp = 13,
    Disconnect = 14,
    /// PUBLISH carrying a geolocation block.
    PublishG = 15,
}

impl PacketType {
    pub fn from_code(code: u8) -> Result<PacketType> {
        use PacketType::*;
        Ok(match code {
            1 => Connect,
            2 => ConnAck,
            3 => Publish,
            4 => PubAck,
            5 => PubRec,
            6 => PubRel,
            7 => PubComp,
            8 => Subscribe,
            9 => SubAck,
            10 => Unsubscribe,
            11 => UnsubAck,
            12 => PingReq,
            13 => PingResp,
            14 => Disconnect,
            15 => PublishG,
            0 => return Err(Error::ProtocolViolation("packet type 0 is reserved")),
            _ => return Err(Error::MalformedPacket("packet type out of range")),
        })
    }

    /// Packet types that may carry a geolocation block.
    pub fn carries_geolocation(self) -> bool {
        use PacketType::*;
        matches!(
            self,
            PublishG | PubAck | PubRec | PubRel | PubComp | Subscribe | Unsubscribe | PingReq | Disconnect
        )
    }

    /// Flag nibble MQTT 3.1.1 mandates for non-publish types.
    fn reserved_flags(self) -> u8 {
        match self {
            PacketType::PubRel | PacketType::Subscribe | PacketType::Unsubscribe => 0x02,
            _ => 0x00,
        }
    }

    pub fn name(self) -> &'static str {
        use PacketType::*;
        match self {
            Connect => "CONNECT",
            ConnAck => "CONNACK",
            Publish => "PUBLISH",
            PubAck => "PUBACK",
            PubRec => "PUBREC",
            PubRel => "PUBREL",
            PubComp => "PUBCOMP",
            Subscribe => "SUBSCRIBE",
            SubAck => "SUBACK",
            Unsubscribe => "UNSUBSCRIBE",
            UnsubAck => "UNSUBACK",
            PingReq => "PINGREQ",
            PingResp => "PINGRESP",
            Disconnect => "DISCONNECT",
            PublishG => "PUBLISHG",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FixedHeader {
    pub packet_type: PacketType,
    pub flags: u8,
    pub remaining_length: usize,
}

impl FixedHeader {
    /// Parses the fixed header. `Ok(None)` means more bytes are needed.
    pub fn parse(bytes: &[u8]) -> Result<Option<(FixedHeader, usize)>> {
        let Some(&first) = bytes.first() else {
            return Ok(None);
        };
        let packet_type = PacketType::from_code(first >> 4)?;
        match decode_remaining_length(&bytes[1..])? {
            None => Ok(None),
            Some((remaining_length, n)) => Ok(Some((
                FixedHeader { packet_type, flags: first & 0x0F, remaining_length },
                1 + n,
            ))),
        }
    }
}

/// Total size of the packet at the front of `bytes`, once its header is complete.
pub fn frame_length(bytes: &[u8]) -> Result<Option<usize>> {
    Ok(FixedHeader::parse(bytes)?.map(|(h, n)| n + h.remaining_length))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum RadiusKind {
    /// Forward publishes whose origin lies inside the circle.
    Inside = 0x00,
    /// Forward publishes whose origin lies outside the circle.
    Outside = 0x01,
}

/// Radius constraint attached to a subscription.
#[derive(Debug, Clone, Copy)]
pub struct GeoConstraint {
    pub kind: RadiusKind,
    /// Meters, strictly positive.
    pub radius: f32,
    pub latitude: f64,
    pub longitude: f64,
}

impl PartialEq for GeoConstraint {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind
            && self.radius.to_bits() == other.radius.to_bits()
            && self.latitude.to_bits() == other.latitude.to_bits()
            && self.longitude.to_bits() == other.longitude.to_bits()
    }
}

impl GeoConstraint {
    pub fn inside(radius: f32, latitude: f64, longitude: f64) -> Self {
        GeoConstraint { kind: RadiusKind::Inside, radius, latitude, longitude }
    }

    pub fn outside(radius: f32, latitude: f64, longitude: f64) -> Self {
        GeoConstraint { kind: RadiusKind::Outside, radius, latitude, longitude }
    }

    pub fn center(&self) -> GeoPoint {
        GeoPoint { latitude: self.latitude, longitude: self.longitude }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius.is_finite() && self.radius > 0.0) {
            return Err(Error::ProtocolViolation("geo filter radius must be positive"));
        }
        if !coordinates_valid(self.latitude, self.longitude) {
            return Err(Error::InvalidCoordinates);
        }
        Ok(())
    }

    /// Whether a publish originating at `origin` passes this constraint.
    pub fn admits(&self, origin: GeoPoint) -> bool {
        let inside = inside_radius(origin, self.center(), self.radius as f64);
        match self.kind {
            RadiusKind::Inside => inside,
            RadiusKind::Outside => !inside,
        }
    }
}

/// One SUBSCRIBE entry.
#[derive(Debug, Clone, PartialEq)]
pub struct TopicFilter {
    pub topic: String,
    pub qos: QoS,
    pub geo: Option<GeoConstraint>,
}

impl TopicFilter {
    pub fn new(topic: impl Into<String>, qos: QoS) -> Self {
        TopicFilter { topic: topic.into(), qos, geo: None }
    }

    pub fn with_geo(mut self, constraint: GeoConstraint) -> Self {
        self.geo = Some(constraint);
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LastWill {
    pub topic: String,
    pub message: Vec<u8>,
    pub qos: QoS,
    pub retain: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Connect {
    /// 4 for MQTT 3.1.1.
    pub protocol_level: u8,
    pub clean_session: bool,
    pub keep_alive: u16,
    pub client_id: String,
    pub will: Option<LastWill>,
    pub username: Option<String>,
    pub password: Option<Vec<u8>>,
}

impl Connect {
    pub fn new(client_id: impl Into<String>, keep_alive: u16) -> Self {
        Connect {
            protocol_level: 4,
            clean_session: true,
            keep_alive,
            client_id: client_id.into(),
            will: None,
            username: None,
            password: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum ConnectReturnCode {
    Accepted = 0,
    UnacceptableProtocolVersion = 1,
    IdentifierRejected = 2,
    ServerUnavailable = 3,
    BadUserNameOrPassword = 4,
    NotAuthorized = 5,
}

impl ConnectReturnCode {
    fn from_u8(v: u8) -> Option<Self> {
        use ConnectReturnCode::*;
        Some(match v {
            0 => Accepted,
            1 => UnacceptableProtocolVersion,
            2 => IdentifierRejected,
            3 => ServerUnavailable,
            4 => BadUserNameOrPassword,
            5 => NotAuthorized,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConnAck {
    pub session_present: bool,
    pub code: ConnectReturnCode,
}

/// PUBLISH, or PUBLISHG when `geo` is set.
#[derive(Debug, Clone, PartialEq)]
pub struct Publish {
    pub dup: bool,
    pub qos: QoS,
    pub retain: bool,
    pub topic: String,
    /// Zero for QoS 0, non-zero otherwise.
    pub pkid: u16,
    pub payload: Vec<u8>,
    pub geo: Option<GeoLocation>,
}

impl Publish {
    pub fn new(topic: impl Into<String>, qos: QoS, payload: impl Into<Vec<u8>>) -> Self {
        Publish {
            dup: false,
            qos,
            retain: false,
            topic: topic.into(),
            pkid: 0,
            payload: payload.into(),
            geo: None,
        }
    }

    pub fn packet_type(&self) -> PacketType {
        if self.geo.is_some() {
            PacketType::PublishG
        } else {
            PacketType::Publish
        }
    }
}

/// PUBACK, PUBREC, PUBREL and PUBCOMP.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ack {
    pub pkid: u16,
    pub geo: Option<GeoLocation>,
}

impl Ack {
    pub fn new(pkid: u16) -> Self {
        Ack { pkid, geo: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Subscribe {
    pub pkid: u16,
    pub geo: Option<GeoLocation>,
    pub filters: Vec<TopicFilter>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubackCode {
    Granted(QoS),
    Failure,
}

impl SubackCode {
    pub fn to_u8(self) -> u8 {
        match self {
            SubackCode::Granted(q) => q as u8,
            SubackCode::Failure => 0x80,
        }
    }

    fn from_u8(v: u8) -> Option<Self> {
        match v {
            0x80 => Some(SubackCode::Failure),
            v => QoS::from_u8(v).map(SubackCode::Granted),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubAck {
    pub pkid: u16,
    pub codes: Vec<SubackCode>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Unsubscribe {
    pub pkid: u16,
    pub geo: Option<GeoLocation>,
    pub topics: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Packet {
    Connect(Connect),
    ConnAck(ConnAck),
    Publish(Publish),
    PubAck(Ack),
    PubRec(Ack),
    PubRel(Ack),
    PubComp(Ack),
    Subscribe(Subscribe),
    SubAck(SubAck),
    Unsubscribe(Unsubscribe),
    UnsubAck(u16),
    PingReq(Option<GeoLocation>),
    PingResp,
    Disconnect(Option<GeoLocation>),
}

impl Packet {
    pub fn packet_type(&self) -> PacketType {
        match self {
            Packet::Connect(_) => PacketType::Connect,
            Packet::ConnAck(_) => PacketType::ConnAck,
            Packet::Publish(p) => p.packet_type(),
            Packet::PubAck(_) => PacketType::PubAck,
            Packet::PubRec(_) => PacketType::PubRec,
            Packet::PubRel(_) => PacketType::PubRel,
            Packet::PubComp(_) => PacketType::PubComp,
            Packet::Subscribe(_) => PacketType::Subscribe,
            Packet::SubAck(_) => PacketType::SubAck,
            Packet::Unsubscribe(_) => PacketType::Unsubscribe,
            Packet::UnsubAck(_) => PacketType::UnsubAck,
            Packet::PingReq(_) => PacketType::PingReq,
            Packet::PingResp => PacketType::PingResp,
            Packet::Disconnect(_) => PacketType::Disconnect,
        }
    }

    pub fn geolocation(&self) -> Option<&GeoLocation> {
        match self {
            Packet::Publish(p) => p.geo.as_ref(),
            Packet::PubAck(a) | Packet::PubRec(a) | Packet::PubRel(a) | Packet::PubComp(a) => {
                a.geo.as_ref()
            }
            Packet::Subscribe(s) => s.geo.as_ref(),
            Packet::Unsubscribe(u) => u.geo.as_ref(),
            Packet::PingReq(g) | Packet::Disconnect(g) => g.as_ref(),
            _ => None,
        }
    }

    /// Attaches (or removes) a geolocation block. Publishing packets switch
    /// between PUBLISH and PUBLISHG accordingly.
    ///
    /// Fails for packet types that never carry geolocation.
    pub fn set_geolocation(&mut self, geo: Option<GeoLocation>) -> Result<()> {
        let slot = match self {
            Packet::Publish(p) => &mut p.geo,
            Packet::PubAck(a) | Packet::PubRec(a) | Packet::PubRel(a) | Packet::PubComp(a) => {
                &mut a.geo
            }
            Packet::Subscribe(s) => &mut s.geo,
            Packet::Unsubscribe(u) => &mut u.geo,
            Packet::PingReq(g) | Packet::Disconnect(g) => g,
            _ => {
                return Err(Error::Encode("packet type cannot carry geolocation"));
            }
        };
        *slot = geo;
        Ok(())
    }

    pub fn encode(&self, out: &mut Vec<u8>) -> Result<()> {
        let mut body = Vec::new();
        let flags = self.encode_body(&mut body)?;
        out.reserve(1 + remaining_length_len(body.len()) + body.len());
        out.push(((self.packet_type() as u8) << 4) | flags);
        encode_remaining_length(body.len(), out)?;
        out.extend_from_slice(&body);
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        self.encode(&mut out)?;
        Ok(out)
    }

    /// Writes the variable header and payload, returning the flag nibble.
    fn encode_body(&self, out: &mut Vec<u8>) -> Result<u8> {
        let geo_flag = |g: &Option<GeoLocation>| if g.is_some() { GEO_FLAG } else { 0 };
        match self {
            Packet::Connect(c) => {
                encode_connect(c, out)?;
                Ok(0)
            }
            Packet::ConnAck(c) => {
                out.push(c.session_present as u8);
                out.push(c.code as u8);
                Ok(0)
            }
            Packet::Publish(p) => {
                if p.qos == QoS::AtMostOnce && p.dup {
                    return Err(Error::Encode("DUP must be 0 for QoS 0"));
                }
                write_string(out, &p.topic)?;
                match p.qos {
                    QoS::AtMostOnce if p.pkid != 0 => {
                        return Err(Error::Encode("QoS 0 publish has no packet identifier"));
                    }
                    QoS::AtMostOnce => {}
                    _ => write_pkid(out, p.pkid)?,
                }
                write_geo(out, &p.geo)?;
                out.extend_from_slice(&p.payload);
                Ok(((p.dup as u8) << 3) | ((p.qos as u8) << 1) | p.retain as u8)
            }
            Packet::PubAck(a) | Packet::PubRec(a) | Packet::PubRel(a) | Packet::PubComp(a) => {
                write_pkid(out, a.pkid)?;
                write_geo(out, &a.geo)?;
                Ok(self.packet_type().reserved_flags() | geo_flag(&a.geo))
            }
            Packet::Subscribe(s) => {
                if s.filters.is_empty() {
                    return Err(Error::Encode("SUBSCRIBE needs at least one filter"));
                }
                write_pkid(out, s.pkid)?;
                write_geo(out, &s.geo)?;
                for f in &s.filters {
                    write_string(out, &f.topic)?;
                    match &f.geo {
                        None => out.push(f.qos as u8),
                        Some(c) => {
                            c.validate().map_err(|_| Error::Encode("invalid geo filter"))?;
                            out.push(f.qos as u8 | GEO_FILTER_FLAG);
                            out.push(c.kind as u8);
                            out.extend_from_slice(&c.radius.to_le_bytes());
                            out.extend_from_slice(&c.latitude.to_le_bytes());
                            out.extend_from_slice(&c.longitude.to_le_bytes());
                        }
                    }
                }
                Ok(0x02 | geo_flag(&s.geo))
            }
            Packet::SubAck(s) => {
                write_pkid(out, s.pkid)?;
                out.extend(s.codes.iter().map(|c| c.to_u8()));
                Ok(0)
            }
            Packet::Unsubscribe(u) => {
                if u.topics.is_empty() {
                    return Err(Error::Encode("UNSUBSCRIBE needs at least one topic"));
                }
                write_pkid(out, u.pkid)?;
                write_geo(out, &u.geo)?;
                for t in &u.topics {
                    write_string(out, t)?;
                }
                Ok(0x02 | geo_flag(&u.geo))
            }
            Packet::UnsubAck(pkid) => {
                write_pkid(out, *pkid)?;
                Ok(0)
            }
            Packet::PingReq(g) | Packet::Disconnect(g) => {
                write_geo(out, g)?;
                Ok(geo_flag(g))
            }
            Packet::PingResp => Ok(0),
        }
    }
}

/// Encodes one packet into a fresh buffer.
pub fn encode_packet(packet: &Packet) -> Result<Vec<u8>> {
    packet.to_bytes()
}

/// Decodes the packet at the front of `bytes`, returning it and its size.
///
/// Trailing bytes after the packet are left alone; a packet that is not
/// complete yields `MalformedPacket`.
pub fn decode_packet(bytes: &[u8]) -> Result<(Packet, usize)> {
    let (header, header_len) =
        FixedHeader::parse(bytes)?.ok_or(Error::MalformedPacket("truncated fixed header"))?;
    let total = header_len
        .checked_add(header.remaining_length)
        .ok_or(Error::MalformedPacket("bad remaining length"))?;
    let body = bytes
        .get(header_len..total)
        .ok_or(Error::MalformedPacket("remaining length exceeds input"))?;
    let packet = decode_body(header, body)?;
    Ok((packet, total))
}

fn check_flags(header: &FixedHeader) -> Result<bool> {
    let base = header.packet_type.reserved_flags();
    if header.flags == base {
        return Ok(false);
    }
    if header.packet_type.carries_geolocation() && header.flags == base | GEO_FLAG {
        return Ok(true);
    }
    if header.flags & GEO_FLAG != 0 && !header.packet_type.carries_geolocation() {
        return Err(Error::ProtocolViolation("geolocation flag on a packet type that cannot carry it"));
    }
    Err(Error::ProtocolViolation("reserved fixed-header flags"))
}

fn decode_body(header: FixedHeader, body: &[u8]) -> Result<Packet> {
    let mut r = Reader::new(body);
    let packet = match header.packet_type {
        PacketType::Publish | PacketType::PublishG => {
            let qos = QoS::from_u8((header.flags >> 1) & 0x03)
                .ok_or(Error::ProtocolViolation("publish QoS 3"))?;
            let dup = header.flags & 0x08 != 0;
            if dup && qos == QoS::AtMostOnce {
                return Err(Error::ProtocolViolation("DUP set on QoS 0 publish"));
            }
            let topic = r.string()?;
            let pkid = if qos == QoS::AtMostOnce { 0 } else { r.pkid()? };
            let geo = if header.packet_type == PacketType::PublishG {
                Some(r.geo()?)
            } else {
                None
            };
            let payload = r.rest().to_vec();
            return Ok(Packet::Publish(Publish {
                dup,
                qos,
                retain: header.flags & 0x01 != 0,
                topic,
                pkid,
                payload,
                geo,
            }));
        }
        PacketType::Connect => {
            check_flags(&header)?;
            Packet::Connect(decode_connect(&mut r)?)
        }
        PacketType::ConnAck => {
            check_flags(&header)?;
            let ack_flags = r.u8()?;
            if ack_flags & 0xFE != 0 {
                return Err(Error::ProtocolViolation("reserved CONNACK flags"));
            }
            let code = ConnectReturnCode::from_u8(r.u8()?)
                .ok_or(Error::MalformedPacket("unknown CONNACK return code"))?;
            Packet::ConnAck(ConnAck { session_present: ack_flags == 1, code })
        }
        PacketType::PubAck | PacketType::PubRec | PacketType::PubRel | PacketType::PubComp => {
            let has_geo = check_flags(&header)?;
            let pkid = r.pkid()?;
            let geo = if has_geo { Some(r.geo()?) } else { None };
            let ack = Ack { pkid, geo };
            match header.packet_type {
                PacketType::PubAck => Packet::PubAck(ack),
                PacketType::PubRec => Packet::PubRec(ack),
                PacketType::PubRel => Packet::PubRel(ack),
                _ => Packet::PubComp(ack),
            }
        }
        PacketType::Subscribe => {
            let has_geo = check_flags(&header)?;
            let pkid = r.pkid()?;
            let geo = if has_geo { Some(r.geo()?) } else { None };
            let mut filters = Vec::new();
            while !r.is_empty() {
                filters.push(decode_filter(&mut r)?);
            }
            if filters.is_empty() {
                return Err(Error::ProtocolViolation("SUBSCRIBE without filters"));
            }
            Packet::Subscribe(Subscribe { pkid, geo, filters })
        }
        PacketType::SubAck => {
            check_flags(&header)?;
            let pkid = r.pkid()?;
            let codes = r
                .rest()
                .iter()
                .map(|&b| SubackCode::from_u8(b).ok_or(Error::MalformedPacket("bad SUBACK code")))
                .collect::<Result<Vec<_>>>()?;
            Packet::SubAck(SubAck { pkid, codes })
        }
        PacketType::Unsubscribe => {
            let has_geo = check_flags(&header)?;
            let pkid = r.pkid()?;
            let geo = if has_geo { Some(r.geo()?) } else { None };
            let mut topics = Vec::new();
            while !r.is_empty() {
                topics.push(r.string()?);
            }
            if topics.is_empty() {
                return Err(Error::ProtocolViolation("UNSUBSCRIBE without topics"));
            }
            Packet::Unsubscribe(Unsubscribe { pkid, geo, topics })
        }
        PacketType::UnsubAck => {
            check_flags(&header)?;
            Packet::UnsubAck(r.pkid()?)
        }
        PacketType::PingReq | PacketType::Disconnect => {
            let geo = if check_flags(&header)? { Some(r.geo()?) } else { None };
            if header.packet_type == PacketType::PingReq {
                Packet::PingReq(geo)
            } else {
                Packet::Disconnect(geo)
            }
        }
        PacketType::PingResp => {
            check_flags(&header)?;
            Packet::PingResp
        }
    };
    if !r.is_empty() {
        return Err(Error::MalformedPacket("trailing bytes after packet body"));
    }
    Ok(packet)
}

fn decode_filter(r: &mut Reader<'_>) -> Result<TopicFilter> {
    let topic = r.string()?;
    let options = r.u8()?;
    if options & !(0x03 | GEO_FILTER_FLAG) != 0 {
        return Err(Error::MalformedPacket("reserved bits in subscription options"));
    }
    let qos = QoS::from_u8(options & 0x03).ok_or(Error::MalformedPacket("requested QoS 3"))?;
    let geo = if options & GEO_FILTER_FLAG != 0 {
        let kind = match r.u8()? {
            0x00 => RadiusKind::Inside,
            0x01 => RadiusKind::Outside,
            _ => return Err(Error::MalformedPacket("unknown geo filter kind")),
        };
        let radius = f32::from_le_bytes(r.array()?);
        let latitude = f64::from_le_bytes(r.array()?);
        let longitude = f64::from_le_bytes(r.array()?);
        let c = GeoConstraint { kind, radius, latitude, longitude };
        c.validate()?;
        Some(c)
    } else {
        None
    };
    Ok(TopicFilter { topic, qos, geo })
}

fn encode_connect(c: &Connect, out: &mut Vec<u8>) -> Result<()> {
    if c.password.is_some() && c.username.is_none() {
        return Err(Error::Encode("password requires a username"));
    }
    write_string(out, "MQTT")?;
    out.push(c.protocol_level);
    let mut flags = 0u8;
    if c.username.is_some() {
        flags |= 0x80;
    }
    if c.password.is_some() {
        flags |= 0x40;
    }
    if let Some(w) = &c.will {
        flags |= 0x04 | ((w.qos as u8) << 3);
        if w.retain {
            flags |= 0x20;
        }
    }
    if c.clean_session {
        flags |= 0x02;
    }
    out.push(flags);
    out.extend_from_slice(&c.keep_alive.to_be_bytes());
    write_string(out, &c.client_id)?;
    if let Some(w) = &c.will {
        write_string(out, &w.topic)?;
        write_binary(out, &w.message)?;
    }
    if let Some(u) = &c.username {
        write_string(out, u)?;
    }
    if let Some(p) = &c.password {
        write_binary(out, p)?;
    }
    Ok(())
}

fn decode_connect(r: &mut Reader<'_>) -> Result<Connect> {
    if r.string()? != "MQTT" {
        return Err(Error::ProtocolViolation("unsupported protocol name"));
    }
    let protocol_level = r.u8()?;
    let flags = r.u8()?;
    if flags & 0x01 != 0 {
        return Err(Error::ProtocolViolation("reserved CONNECT flag"));
    }
    let has_will = flags & 0x04 != 0;
    let will_qos = (flags >> 3) & 0x03;
    let will_retain = flags & 0x20 != 0;
    if !has_will && (will_qos != 0 || will_retain) {
        return Err(Error::ProtocolViolation("will QoS/retain without will flag"));
    }
    let will_qos = QoS::from_u8(will_qos).ok_or(Error::ProtocolViolation("will QoS 3"))?;
    let has_username = flags & 0x80 != 0;
    let has_password = flags & 0x40 != 0;
    if has_password && !has_username {
        return Err(Error::ProtocolViolation("password flag without username flag"));
    }
    let keep_alive = r.u16()?;
    let client_id = r.string()?;
    let will = if has_will {
        Some(LastWill { topic: r.string()?, message: r.binary()?, qos: will_qos, retain: will_retain })
    } else {
        None
    };
    let username = if has_username { Some(r.string()?) } else { None };
    let password = if has_password { Some(r.binary()?) } else { None };
    Ok(Connect {
        protocol_level,
        clean_session: flags & 0x02 != 0,
        keep_alive,
        client_id,
        will,
        username,
        password,
    })
}

fn write_string(out: &mut Vec<u8>, s: &str) -> Result<()> {
    write_binary(out, s.as_bytes())
}

fn write_binary(out: &mut Vec<u8>, b: &[u8]) -> Result<()> {
    let len = u16::try_from(b.len()).map_err(|_| Error::Encode("string longer than 65535 bytes"))?;
    out.extend_from_slice(&len.to_be_bytes());
    out.extend_from_slice(b);
    Ok(())
}

fn write_pkid(out: &mut Vec<u8>, pkid: u16) -> Result<()> {
    if pkid == 0 {
        return Err(Error::Encode("packet identifier must be non-zero"));
    }
    out.extend_from_slice(&pkid.to_be_bytes());
    Ok(())
}

fn write_geo(out: &mut Vec<u8>, geo: &Option<GeoLocation>) -> Result<()> {
    if let Some(g) = geo {
        g.validate().map_err(|_| Error::Encode("geolocation coordinates out of range"))?;
        g.write_to(out);
    }
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf }
    }

    fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(Error::MalformedPacket("unexpected end of packet"));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().unwrap())
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_be_bytes(self.array()?))
    }

    fn pkid(&mut self) -> Result<u16> {
        match self.u16()? {
            0 => Err(Error::ProtocolViolation("packet identifier must be non-zero")),
            id => Ok(id),
        }
    }

    fn binary(&mut self) -> Result<Vec<u8>> {
        let len = self.u16()? as usize;
        Ok(self.take(len)?.to_vec())
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u16()? as usize;
        let bytes = self.take(len)?;
        core::str::from_utf8(bytes)
            .map(String::from)
            .map_err(|_| Error::MalformedPacket("string is not valid UTF-8"))
    }

    fn geo(&mut self) -> Result<GeoLocation> {
        GeoLocation::decode(self.take(GEO_BLOCK_LEN)?)
    }

    fn rest(&mut self) -> &'a [u8] {
        core::mem::take(&mut self.buf)
    }
}
