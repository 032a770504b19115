//! Random packet values for the codec criteria.

use mqttg::core::{
    Ack, ConnAck, Connect, ConnectReturnCode, GeoConstraint, GeoLocation, LastWill, Packet, Publish, QoS, RadiusKind,
    SubAck, SubackCode, Subscribe, TopicFilter, Unsubscribe,
};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

const LEVEL_CHARS: &[char] = &['a', 'b', 'z', 'A', '0', '9', '-', '_', ' ', '$', 'é', 'ß', '位', '🚚'];

pub fn qos(rng: &mut ChaCha8Rng) -> QoS {
    *[QoS::AtMostOnce, QoS::AtLeastOnce, QoS::ExactlyOnce].choose(rng).unwrap()
}

fn level(rng: &mut ChaCha8Rng) -> String {
    (0..rng.gen_range(0..6)).map(|_| *LEVEL_CHARS.choose(rng).unwrap()).collect()
}

pub fn topic_name(rng: &mut ChaCha8Rng) -> String {
    loop {
        let t = (0..rng.gen_range(1..5)).map(|_| level(rng)).collect::<Vec<_>>().join("/");
        if !t.is_empty() {
            return t;
        }
    }
}

pub fn topic_filter(rng: &mut ChaCha8Rng) -> String {
    let n = rng.gen_range(1..5);
    let mut levels: Vec<String> = (0..n)
        .map(|_| if rng.gen_bool(0.25) { "+".to_string() } else { level(rng) })
        .collect();
    if rng.gen_bool(0.3) {
        levels.push("#".into());
    }
    let f = levels.join("/");
    if f.is_empty() {
        "#".into()
    } else {
        f
    }
}

fn bytes(rng: &mut ChaCha8Rng, max: usize) -> Vec<u8> {
    let n = if rng.gen_bool(0.02) { rng.gen_range(128..20_000) } else { rng.gen_range(0..max) };
    (0..n).map(|_| rng.gen()).collect()
}

fn pkid(rng: &mut ChaCha8Rng) -> u16 {
    if rng.gen_bool(0.1) {
        *[1, 0x00FF, 0x0100, u16::MAX].choose(rng).unwrap()
    } else {
        rng.gen_range(1..=u16::MAX)
    }
}

fn pick_f64(rng: &mut ChaCha8Rng, limit: f64) -> f64 {
    match rng.gen_range(0..10) {
        0 => *[limit, -limit, 0.0, -0.0].choose(rng).unwrap(),
        1 => f64::from_bits(rng.gen::<u64>() >> 12) * limit.signum(), // subnormals
        _ => rng.gen_range(-limit..=limit),
    }
}

/// Any block the decoder accepts: in-range coordinates, finite elevation,
/// any version byte.
pub fn geo(rng: &mut ChaCha8Rng) -> GeoLocation {
    let elevation = loop {
        let e = if rng.gen_bool(0.5) { f32::from_bits(rng.gen()) } else { rng.gen_range(-500.0..9000.0) };
        if e.is_finite() {
            break e;
        }
    };
    GeoLocation {
        version: if rng.gen_bool(0.9) { 1 } else { rng.gen() },
        latitude: pick_f64(rng, 90.0),
        longitude: pick_f64(rng, 180.0),
        elevation,
    }
}

fn maybe_geo(rng: &mut ChaCha8Rng, with_geo: bool) -> Option<GeoLocation> {
    with_geo.then(|| geo(rng))
}

pub fn constraint(rng: &mut ChaCha8Rng) -> GeoConstraint {
    GeoConstraint {
        kind: if rng.gen() { RadiusKind::Inside } else { RadiusKind::Outside },
        radius: rng.gen_range(0.001f32..2.0e7),
        latitude: rng.gen_range(-90.0..=90.0),
        longitude: rng.gen_range(-180.0..=180.0),
    }
}

/// A packet of wire type `code` (1..=15). `with_geo` is honoured for types
/// that can carry a block; PUBLISH (3) and PUBLISHG (15) decide it by type.
pub fn packet(rng: &mut ChaCha8Rng, code: u8, with_geo: bool) -> Packet {
    let ack = |rng: &mut ChaCha8Rng| Ack { pkid: pkid(rng), geo: maybe_geo(rng, with_geo) };
    match code {
        1 => {
            let will = rng.gen_bool(0.5).then(|| LastWill {
                topic: topic_name(rng),
                message: bytes(rng, 40),
                qos: qos(rng),
                retain: rng.gen(),
            });
            let username = rng.gen_bool(0.5).then(|| level(rng));
            let password = if username.is_some() && rng.gen() { Some(bytes(rng, 20)) } else { None };
            Packet::Connect(Connect {
                protocol_level: 4,
                clean_session: rng.gen(),
                keep_alive: rng.gen(),
                client_id: level(rng),
                will,
                username,
                password,
            })
        }
        2 => {
            let code = *[
                ConnectReturnCode::Accepted,
                ConnectReturnCode::UnacceptableProtocolVersion,
                ConnectReturnCode::IdentifierRejected,
                ConnectReturnCode::ServerUnavailable,
                ConnectReturnCode::BadUserNameOrPassword,
                ConnectReturnCode::NotAuthorized,
            ]
            .choose(rng)
            .unwrap();
            Packet::ConnAck(ConnAck { session_present: code == ConnectReturnCode::Accepted && rng.gen(), code })
        }
        3 | 15 => {
            let q = qos(rng);
            Packet::Publish(Publish {
                dup: q != QoS::AtMostOnce && rng.gen(),
                qos: q,
                retain: rng.gen(),
                topic: topic_name(rng),
                pkid: if q == QoS::AtMostOnce { 0 } else { pkid(rng) },
                payload: bytes(rng, 64),
                geo: (code == 15).then(|| geo(rng)),
            })
        }
        4 => Packet::PubAck(ack(rng)),
        5 => Packet::PubRec(ack(rng)),
        6 => Packet::PubRel(ack(rng)),
        7 => Packet::PubComp(ack(rng)),
        8 => Packet::Subscribe(Subscribe {
            pkid: pkid(rng),
            geo: maybe_geo(rng, with_geo),
            filters: (0..rng.gen_range(1..5))
                .map(|_| {
                    let f = TopicFilter::new(topic_filter(rng), qos(rng));
                    if rng.gen() {
                        f.with_geo(constraint(rng))
                    } else {
                        f
                    }
                })
                .collect(),
        }),
        9 => Packet::SubAck(SubAck {
            pkid: pkid(rng),
            codes: (0..rng.gen_range(1..6))
                .map(|_| if rng.gen_bool(0.2) { SubackCode::Failure } else { SubackCode::Granted(qos(rng)) })
                .collect(),
        }),
        10 => Packet::Unsubscribe(Unsubscribe {
            pkid: pkid(rng),
            geo: maybe_geo(rng, with_geo),
            topics: (0..rng.gen_range(1..5)).map(|_| topic_filter(rng)).collect(),
        }),
        11 => Packet::UnsubAck(pkid(rng)),
        12 => Packet::PingReq(maybe_geo(rng, with_geo)),
        13 => Packet::PingResp,
        14 => Packet::Disconnect(maybe_geo(rng, with_geo)),
        _ => unreachable!("packet type {code}"),
    }
}
