//! End-to-end acceptance checks. Runs without the libtest harness and prints
//! one PASS/FAIL line per criterion; exits non-zero if any fails.

#[path = "../common/mod.rs"]
mod common;
mod gen;

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use mqttg::core::geometry::{haversine_distance, normalize_longitude, point_in_polygon, Offset};
use mqttg::core::{
    decode_packet, Action, Broker, Connect, GeoConstraint, GeoLocation, GeoPoint, GeofencePolygon, Packet, Publish,
    QoS, RadiusKind, Subscribe, TopicFilter, Unsubscribe,
};
use mqttg::replay::{self, ReplayOptions};
use mqttg::route::{self, RouteSpec, Shape};
use mqttg::Client;
use oracle::{Oracle, OracleSub};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------------------
// 1 and 3: codec corpus

const CORPUS: usize = 100_000;

fn corpus() -> Vec<Packet> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC0DEC);
    (0..CORPUS).map(|i| gen::packet(&mut rng, 1 + (i % 15) as u8, (i / 15) % 2 == 0)).collect()
}

fn codec_round_trip() -> Outcome {
    let started = Instant::now();
    let packets = corpus();
    let mut per_type = BTreeMap::<&str, (usize, usize)>::new();
    for (i, p) in packets.iter().enumerate() {
        let bytes = p.to_bytes().map_err(|e| format!("#{i} encode failed: {e}: {p:?}"))?;
        let (back, used) = decode_packet(&bytes).map_err(|e| format!("#{i} decode failed: {e}: {p:?}"))?;
        check(used == bytes.len(), || format!("#{i} consumed {used} of {} bytes", bytes.len()))?;
        check(&back == p, || format!("#{i} round trip changed the value:\n{p:?}\n{back:?}"))?;
        check(back.to_bytes().unwrap() == bytes, || format!("#{i} re-encoding differs"))?;
        let e = per_type.entry(p.packet_type().name()).or_default();
        if p.geolocation().is_some() {
            e.1 += 1;
        } else {
            e.0 += 1;
        }
    }
    let elapsed = started.elapsed();
    check(per_type.len() == 15, || format!("only {} packet types generated", per_type.len()))?;
    for name in ["PUBACK", "PUBREC", "PUBREL", "PUBCOMP", "SUBSCRIBE", "UNSUBSCRIBE", "PINGREQ", "DISCONNECT"] {
        let (plain, geo) = per_type[name];
        check(plain > 0 && geo > 0, || format!("{name} lacks geo or plain samples"))?;
    }
    check(elapsed < Duration::from_secs(60), || format!("took {elapsed:?}"))?;
    Ok(format!("{CORPUS} packets over 15 types, bit-exact, {:.1} s", elapsed.as_secs_f64()))
}

fn remaining_length(bytes: &[u8]) -> (usize, usize) {
    let (mut value, mut mult) = (0usize, 1usize);
    for (i, b) in bytes[1..].iter().enumerate() {
        value += (*b as usize & 0x7F) * mult;
        mult *= 128;
        if b & 0x80 == 0 {
            return (value, i + 2);
        }
    }
    panic!("unterminated remaining length")
}

/// Where the block starts inside the body, from the packet's own fields.
fn block_offset(p: &Packet) -> usize {
    match p {
        Packet::Publish(pb) => 2 + pb.topic.len() + if pb.qos == QoS::AtMostOnce { 0 } else { 2 },
        Packet::PingReq(_) | Packet::Disconnect(_) => 0,
        _ => 2,
    }
}

fn geo_block_conformance() -> Outcome {
    let mut checked = 0;
    for (i, p) in corpus().iter().enumerate() {
        let Some(geo) = p.geolocation().copied() else { continue };
        let mut plain = p.clone();
        plain.set_geolocation(None).unwrap();
        let (with, without) = (p.to_bytes().unwrap(), plain.to_bytes().unwrap());
        let ((rl_with, hdr_with), (rl_without, hdr_without)) = (remaining_length(&with), remaining_length(&without));
        check(rl_with == rl_without + 21, || format!("#{i}: body grew by {} bytes", rl_with as isize - rl_without as isize))?;
        let (body, plain_body) = (&with[hdr_with..], &without[hdr_without..]);

        if let Packet::Publish(_) = p {
            check(with[0] >> 4 == 0xF && without[0] >> 4 == 0x3, || format!("#{i}: PUBLISHG type nibble"))?;
            check(with[0] & 0x0F == without[0] & 0x0F, || format!("#{i}: PUBLISHG changed flags"))?;
        } else {
            check(with[0] == without[0] | 0x04 && without[0] & 0x04 == 0, || format!("#{i}: geo flag bit"))?;
        }

        let at = block_offset(p);
        let block = &body[at..at + 21];
        check(block[0] == geo.version, || format!("#{i}: version byte"))?;
        let lat = f64::from_le_bytes(block[1..9].try_into().unwrap());
        let lon = f64::from_le_bytes(block[9..17].try_into().unwrap());
        let elev = f32::from_le_bytes(block[17..21].try_into().unwrap());
        check(
            lat.to_bits() == geo.latitude.to_bits()
                && lon.to_bits() == geo.longitude.to_bits()
                && elev.to_bits() == geo.elevation.to_bits(),
            || format!("#{i}: block fields are not little-endian IEEE-754 of {geo:?}"),
        )?;
        check(body[..at] == plain_body[..at] && body[at + 21..] == plain_body[at..], || {
            format!("#{i}: bytes outside the block differ from the plain packet")
        })?;
        checked += 1;
    }
    check(checked > 30_000, || format!("only {checked} geo packets"))?;
    Ok(format!("{checked} geo packets: +21 bytes, LE fields, rest identical"))
}

// ---------------------------------------------------------------------------
// 2: differential against a plain MQTT 3.1.1 reference

fn backward_compatibility() -> Outcome {
    let broker = common::start_broker();
    let (client, server) = common::scripted_session(broker.addr(), common::config(common::SCRIPT_ID, broker.addr()));
    let (want_client, want_server) = common::scripted_session_baseline();
    if let Some(d) = common::first_difference(&client, &want_client) {
        return Err(format!("client stream: {d}"));
    }
    if let Some(d) = common::first_difference(&server, &want_server) {
        return Err(format!("broker stream: {d}"));
    }
    Ok(format!("{} client + {} broker bytes, 0 differences", client.len(), server.len()))
}

// ---------------------------------------------------------------------------
// 4: routing against the brute-force oracle

const SCENARIOS: usize = 1000;

fn region_point(rng: &mut ChaCha8Rng) -> (f64, f64) {
    // Straddles the antimeridian so longitude wrapping is exercised.
    (45.0 + rng.gen_range(-1.5..1.5), normalize_longitude(179.0 + rng.gen_range(-2.0..2.0)))
}

fn region_geo(rng: &mut ChaCha8Rng) -> GeoLocation {
    let (lat, lon) = region_point(rng);
    let mut g = GeoLocation::new(lat, lon, rng.gen_range(0.0..100.0)).unwrap();
    if rng.gen_bool(0.05) {
        g.version = 2;
    }
    g
}

/// Simple polygon with vertices at jittered, increasing angles.
fn star(rng: &mut ChaCha8Rng, n: usize, rmin: f64, rmax: f64) -> Vec<(f64, f64)> {
    let step = std::f64::consts::TAU / n as f64;
    (0..n)
        .map(|k| {
            let a = step * (k as f64 + rng.gen_range(0.0..0.8));
            let r = rng.gen_range(rmin..rmax);
            (r * a.sin(), r * a.cos())
        })
        .collect()
}

fn small_topic(rng: &mut ChaCha8Rng) -> String {
    let n = rng.gen_range(1..=3);
    (0..n).map(|_| *["a", "b", "c"].choose(rng).unwrap()).collect::<Vec<_>>().join("/")
}

fn small_filter(rng: &mut ChaCha8Rng) -> String {
    let n = rng.gen_range(1..=3);
    let mut levels: Vec<&str> = (0..n).map(|_| *["a", "b", "c", "+", "+"].choose(rng).unwrap()).collect();
    if rng.gen_bool(0.25) {
        levels.push("#");
    }
    levels.join("/")
}

struct Harness {
    broker: Broker,
    oracle: Oracle,
    conn_of: BTreeMap<String, u64>,
    client_of: BTreeMap<u64, String>,
    next_conn: u64,
    now: f64,
    next_pkid: u16,
}

impl Harness {
    fn send(&mut self, id: &str, packet: Packet) -> Vec<Action> {
        self.now += 1.0;
        let conn = self.conn_of[id];
        self.broker.on_packet(conn, packet, self.now).expect("broker accepts scenario packet")
    }

    fn pkid(&mut self) -> u16 {
        self.next_pkid = self.next_pkid.wrapping_add(1).max(1);
        self.next_pkid
    }

    fn connect(&mut self, id: &str) {
        self.next_conn += 1;
        self.conn_of.insert(id.to_string(), self.next_conn);
        self.client_of.insert(self.next_conn, id.to_string());
        self.send(id, Packet::Connect(Connect::new(id, 60)));
        self.oracle.connect(id);
    }

    fn ping(&mut self, id: &str, g: GeoLocation) {
        self.oracle.saw_geo(id, &g);
        self.send(id, Packet::PingReq(Some(g)));
    }
}

/// Returns how many subscriptions the geo rules denied.
fn routing_scenario(rng: &mut ChaCha8Rng, stats: &mut [usize; 3]) -> Result<usize, String> {
    let mut h = Harness {
        broker: Broker::new(),
        oracle: Oracle::default(),
        conn_of: BTreeMap::new(),
        client_of: BTreeMap::new(),
        next_conn: 0,
        now: 0.0,
        next_pkid: 0,
    };
    let ids: Vec<String> = (0..rng.gen_range(1..=10)).map(|i| format!("c{i}")).collect();
    for id in &ids {
        h.connect(id);
        if rng.gen_bool(0.6) {
            let g = region_geo(rng);
            h.ping(id, g);
        }
    }

    for _ in 0..rng.gen_range(0..=20) {
        let id = ids.choose(rng).unwrap().clone();
        let (lat, lon) = region_point(rng);
        let geo = match rng.gen_range(0..3) {
            0 => None,
            k => Some(GeoConstraint {
                kind: if k == 1 { RadiusKind::Inside } else { RadiusKind::Outside },
                radius: rng.gen_range(5_000.0f32..250_000.0),
                latitude: lat,
                longitude: lon,
            }),
        };
        let filter = TopicFilter { topic: small_filter(rng), qos: gen::qos(rng), geo };
        let packet_geo = rng.gen_bool(0.2).then(|| region_geo(rng));
        if let Some(g) = &packet_geo {
            h.oracle.saw_geo(&id, g);
        }
        h.oracle.subscribe(&id, OracleSub { filter: filter.topic.clone(), qos: filter.qos, geo: filter.geo });
        let pkid = h.pkid();
        h.send(&id, Packet::Subscribe(Subscribe { pkid, geo: packet_geo, filters: vec![filter] }));
    }

    for _ in 0..rng.gen_range(0..=6) {
        let owner = ids.choose(rng).unwrap().clone();
        let subs = &h.oracle.clients[&owner].subs;
        let topic = match subs.choose(rng) {
            Some(s) if rng.gen_bool(0.9) => s.filter.clone(),
            _ => small_filter(rng),
        };
        let n = rng.gen_range(3..=8);
        let polygon = if rng.gen() {
            let (clat, clon) = region_point(rng);
            let vertices = star(rng, n, 0.2, 1.5)
                .into_iter()
                .map(|(dlat, dlon)| GeoPoint { latitude: clat + dlat, longitude: normalize_longitude(clon + dlon) })
                .collect();
            GeofencePolygon::Static { vertices }
        } else {
            let offsets = star(rng, n, 0.3, 1.5).into_iter().map(|(lat, lon)| Offset { lat, lon }).collect();
            GeofencePolygon::Dynamic { anchor_client: ids.choose(rng).unwrap().clone(), offsets }
        };
        if h.broker.register_polygon(&owner, &topic, polygon.clone()).is_ok() {
            h.oracle.fences.push((owner, topic, polygon));
        }
    }

    for _ in 0..rng.gen_range(1..=50) {
        let roll = rng.gen_range(0..100);
        if roll < 20 {
            let id = ids.choose(rng).unwrap().clone();
            let g = region_geo(rng);
            h.ping(&id, g);
            continue;
        }
        if roll < 23 {
            let id = ids.choose(rng).unwrap().clone();
            if let Some(s) = h.oracle.clients[&id].subs.choose(rng).cloned() {
                h.oracle.unsubscribe(&id, &s.filter);
                let pkid = h.pkid();
                h.send(&id, Packet::Unsubscribe(Unsubscribe { pkid, geo: None, topics: vec![s.filter] }));
            }
            continue;
        }
        if roll < 25 {
            let id = ids.choose(rng).unwrap().clone();
            h.connect(&id);
            continue;
        }

        let from = ids.choose(rng).unwrap().clone();
        let qos = gen::qos(rng);
        let mut p = Publish::new(small_topic(rng), qos, vec![rng.gen::<u8>()]);
        if qos != QoS::AtMostOnce {
            p.pkid = h.pkid();
        }
        p.geo = rng.gen_bool(0.65).then(|| region_geo(rng));
        let expected = h.oracle.publish(&from, &p);
        let actions = h.send(&from, Packet::Publish(p.clone()));
        let mut actual = BTreeSet::new();
        for a in actions {
            if let Action::Send { conn, packet: Packet::Publish(out) } = a {
                check(out.topic == p.topic && out.payload == p.payload, || "delivered publish was altered".into())?;
                check(out.geo.is_none() || out.geo == p.geo, || "delivered geo differs from the publisher's".into())?;
                let id = h.client_of[&conn].clone();
                check(actual.insert((id.clone(), out.qos, out.geo.is_some())), || format!("{id} got the publish twice"))?;
            }
        }
        if actual != expected {
            return Err(format!(
                "publish {p:?} from {from}\n  broker: {actual:?}\n  oracle: {expected:?}\n  fences: {:?}",
                h.oracle.fences
            ));
        }
        stats[0] += 1;
        stats[1] += actual.len();
        stats[2] += actual.iter().filter(|d| d.2).count();
    }
    Ok(h.oracle.denied)
}

fn routing_oracle() -> Outcome {
    oracle::self_check();
    let mut rng = ChaCha8Rng::seed_from_u64(0x0AC1E);
    let mut stats = [0usize; 3];
    let mut denied = 0;
    for i in 0..SCENARIOS {
        let mut scenario_rng = ChaCha8Rng::seed_from_u64(rng.gen());
        denied += routing_scenario(&mut scenario_rng, &mut stats).map_err(|e| format!("scenario {i}: {e}"))?;
    }
    check(stats[1] > 1000 && stats[2] > 100, || format!("corpus too thin: {stats:?}"))?;
    Ok(format!(
        "{SCENARIOS} scenarios, {} publishes, {} deliveries ({} with geo), {denied} geo denials, 100% agreement",
        stats[0], stats[1], stats[2]
    ))
}

// ---------------------------------------------------------------------------
// 5: route replay

fn route_replay() -> Outcome {
    let started = Instant::now();
    let broker = common::start_broker();
    let spec = RouteSpec {
        shape: Shape::EquatorLine { length_m: 4900.0 },
        fixes: 17,
        interval_s: 30.0,
        start: GeoPoint { latitude: 0.0, longitude: 0.0 },
        elevation: 0.0,
    };
    let route = route::generate(&spec).map_err(|e| e.to_string())?;
    let opts = ReplayOptions {
        host: "127.0.0.1".into(),
        port: broker.addr().port(),
        admin: broker.admin_addr().unwrap().to_string(),
        client_id: replay::unique_client_id(),
        topic: "replay/position".into(),
        qos: QoS::AtLeastOnce,
        speedup: 100.0,
    };
    let report = replay::replay(&route, &opts).map_err(|e| e.to_string())?;
    let elapsed = started.elapsed();
    check(report.relative_error <= 0.001, || format!("relative error {:.6}%", report.relative_error * 100.0))?;
    let client_side = route.haversine_length();
    check((report.broker_distance_m - client_side).abs() <= 1e-9 * client_side, || {
        format!("broker {} m vs client-side sum {client_side} m", report.broker_distance_m)
    })?;
    check(elapsed < Duration::from_secs(30), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "broker {:.3} m vs analytic 4900 m, error {:.2e}%, {} fixes in {:.1} s",
        report.broker_distance_m,
        report.relative_error * 100.0,
        report.fixes_sent,
        elapsed.as_secs_f64()
    ))
}

// ---------------------------------------------------------------------------
// 6: geometry properties

fn sphere_point(rng: &mut ChaCha8Rng) -> GeoPoint {
    GeoPoint { latitude: rng.gen_range(-1.0f64..=1.0).asin().to_degrees(), longitude: rng.gen_range(-180.0..180.0) }
}

fn geometry_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x6E0);
    const N: usize = 10_000;
    for i in 0..N {
        let a = sphere_point(&mut rng);
        let b = match i % 10 {
            0 => a,
            1 => GeoPoint { latitude: -a.latitude, longitude: normalize_longitude(a.longitude + 180.0) },
            _ => sphere_point(&mut rng),
        };
        let c = sphere_point(&mut rng);
        let (ab, ba) = (haversine_distance(a, b), haversine_distance(b, a));
        let (bc, ac) = (haversine_distance(b, c), haversine_distance(a, c));
        check((ab - ba).abs() <= 1e-6 * ab.max(1e-3), || format!("asymmetric: {a:?} {b:?}: {ab} vs {ba}"))?;
        check(ac <= (ab + bc) * (1.0 + 1e-6) + 1e-6, || format!("triangle: {a:?} {b:?} {c:?}"))?;
        let oracle = oracle::distance((a.latitude, a.longitude), (b.latitude, b.longitude));
        check((ab - oracle).abs() <= 1e-6 * oracle.max(1.0), || format!("{a:?} {b:?}: {ab} vs chord {oracle}"))?;
    }

    let mut inside = 0;
    for i in 0..N {
        let (clat, clon) = (rng.gen_range(-60.0..60.0), rng.gen_range(-180.0..180.0));
        let (ax, ay) = (rng.gen_range(0.5..40.0), rng.gen_range(0.5..25.0));
        let n = rng.gen_range(3..=12);
        let mut angles: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..std::f64::consts::TAU)).collect();
        angles.sort_by(f64::total_cmp);
        let vertices: Vec<GeoPoint> = angles
            .iter()
            .map(|t| GeoPoint { latitude: clat + ay * t.sin(), longitude: normalize_longitude(clon + ax * t.cos()) })
            .collect();
        let p = GeoPoint {
            latitude: clat + rng.gen_range(-1.2..1.2) * ay,
            longitude: normalize_longitude(clon + rng.gen_range(-1.2..1.2) * ax),
        };
        let got = point_in_polygon(p, &vertices);
        let pairs: Vec<_> = vertices.iter().map(|v| (v.latitude, v.longitude)).collect();
        let want = oracle::winding_contains((p.latitude, p.longitude), &pairs);
        check(got == want, || format!("sample {i}: {p:?} in {vertices:?}: got {got}, winding says {want}"))?;
        inside += got as usize;
    }
    check(inside > N / 5 && inside < N * 4 / 5, || format!("unbalanced sample: {inside} inside"))?;
    Ok(format!("{N} triples within 1e-6; {N} polygon samples ({inside} inside) agree 100%"))
}

// ---------------------------------------------------------------------------
// 7: QoS 2 with geolocation on every client flow packet

fn qos2_flow_with_geo() -> Outcome {
    let broker = common::start_broker();
    let addr = broker.addr();
    let sub_proxy = common::Proxy::start(addr);
    let pub_proxy = common::Proxy::start(addr);
    let sub = Client::connect(common::geo_config("q2-sub", sub_proxy.addr, 49.90, -97.14, 230.0)).unwrap();
    sub.subscribe(TopicFilter::new("flow/q2", QoS::ExactlyOnce)).unwrap();
    let publisher = Client::connect(common::geo_config("q2-pub", pub_proxy.addr, 49.85, -99.95, 400.0)).unwrap();

    let fixes = |b: &Broker| -> u64 { ["q2-sub", "q2-pub"].iter().filter_map(|id| b.locations().get(id)).map(|r| r.fixes).sum() };
    let before = broker.with_broker(|b| fixes(b));
    let sent_before = (sub_proxy.client_bytes().len(), pub_proxy.client_bytes().len());

    publisher.publish("flow/q2", "exactly once", QoS::ExactlyOnce, false).map_err(|e| e.to_string())?;
    let m = sub.recv_timeout(Duration::from_secs(5)).ok_or("subscriber got nothing")?;
    check(m.publisher_geolocation.is_some(), || "delivery lost the publisher's location".into())?;
    check(
        common::eventually(Duration::from_secs(5), || {
            broker.with_broker(|b| b.session("q2-sub").is_some_and(|s| s.inflight() == 0))
        }),
        || "outbound QoS 2 flow never completed".into(),
    )?;
    let updates = broker.with_broker(|b| fixes(b)) - before;

    let flow = |bytes: Vec<u8>, from: usize| common::packets(&bytes[from..]);
    let pub_sent = flow(pub_proxy.client_bytes(), sent_before.1);
    let sub_sent = flow(sub_proxy.client_bytes(), sent_before.0);
    let names = |ps: &[Packet]| ps.iter().map(|p| p.packet_type().name()).collect::<Vec<_>>();
    check(names(&pub_sent) == ["PUBLISHG", "PUBREL"], || format!("publisher sent {:?}", names(&pub_sent)))?;
    check(names(&sub_sent) == ["PUBREC", "PUBCOMP"], || format!("subscriber sent {:?}", names(&sub_sent)))?;
    for p in pub_sent.iter().chain(&sub_sent) {
        check(p.geolocation().is_some(), || format!("{} without geolocation", p.packet_type().name()))?;
    }
    let pub_got = names(&common::packets(&pub_proxy.broker_bytes()));
    check(pub_got.ends_with(&["PUBREC", "PUBCOMP"]), || format!("publisher received {pub_got:?}"))?;
    check(updates >= 4, || format!("location table saw {updates} updates"))?;
    Ok(format!("PUBLISHG/PUBREC/PUBREL/PUBCOMP all carry geo; {updates} location updates"))
}

// ---------------------------------------------------------------------------
// 8: fail-closed filtering

fn fail_closed() -> Outcome {
    let broker = common::start_broker();
    let addr = broker.addr();
    let mut rng = ChaCha8Rng::seed_from_u64(0xFA11);
    let (mut plain_total, mut geo_total) = (0, 0);
    let drain = |c: &Client| -> Vec<mqttg::InboundMessage> {
        c.ping(Duration::from_secs(5)).unwrap();
        std::iter::from_fn(|| c.try_recv()).collect()
    };
    for s in 0..100 {
        let topic = format!("fc{s}/{}", small_topic(&mut rng));
        let here = (rng.gen_range(-60.0..60.0), rng.gen_range(-179.0..179.0));
        let plain: Vec<Client> = (0..rng.gen_range(1..=3))
            .map(|i| {
                let c = Client::connect(common::config(&format!("fc{s}-plain{i}"), addr)).unwrap();
                let f = if rng.gen() { topic.clone() } else { format!("fc{s}/#") };
                c.subscribe(TopicFilter::new(f, gen::qos(&mut rng))).unwrap();
                c
            })
            .collect();
        let geo: Vec<Client> = (0..rng.gen_range(1..=4))
            .map(|i| {
                let id = format!("fc{s}-geo{i}");
                let cfg = if rng.gen() {
                    common::geo_config(&id, addr, here.0, here.1, 0.0)
                } else {
                    common::config(&id, addr)
                };
                let c = Client::connect(cfg).unwrap();
                // Either constraint would admit a publish from `here`.
                let constraint = if rng.gen() {
                    GeoConstraint::inside(rng.gen_range(1_000.0..50_000.0), here.0 + 0.001, here.1)
                } else {
                    GeoConstraint::outside(rng.gen_range(1_000.0..50_000.0), -here.0, here.1 + 180.0 * if here.1 > 0.0 { -1.0 } else { 1.0 })
                };
                c.subscribe(TopicFilter::new(topic.clone(), gen::qos(&mut rng)).with_geo(constraint)).unwrap();
                c
            })
            .collect();

        let blind = Client::connect(common::config(&format!("fc{s}-pub"), addr)).unwrap();
        blind.publish(&topic, "no location", gen::qos(&mut rng), false).unwrap();
        // Once the publisher's ping returns, routing has happened; the
        // subscribers' own pings then flush their queues.
        blind.ping(Duration::from_secs(5)).unwrap();
        for c in &plain {
            let got = drain(c);
            check(got.len() == 1 && got[0].publisher_geolocation.is_none(), || format!("scenario {s}: plain got {}", got.len()))?;
        }
        for c in &geo {
            let got = drain(c);
            check(got.is_empty(), || format!("scenario {s}: {} leaked to a geo-constrained subscriber", c.client_id()))?;
        }
        plain_total += plain.len();
        geo_total += geo.len();

        // Control: the same subscribers do hear a publish that has a location.
        let seen = Client::connect(common::geo_config(&format!("fc{s}-geo-pub"), addr, here.0, here.1, 0.0)).unwrap();
        seen.publish(&topic, "located", QoS::AtLeastOnce, false).unwrap();
        seen.ping(Duration::from_secs(5)).unwrap();
        for c in geo.iter().chain(&plain) {
            check(drain(c).len() == 1, || format!("scenario {s}: control publish missed {}", c.client_id()))?;
        }
    }
    Ok(format!("100 scenarios: {plain_total} plain subscribers received, {geo_total} geo-constrained received nothing"))
}

// ---------------------------------------------------------------------------

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("codec round-trip", codec_round_trip),
        ("backward-compatible bytes", backward_compatibility),
        ("geolocation block conformance", geo_block_conformance),
        ("routing oracle equivalence", routing_oracle),
        ("4.9 km route replay", route_replay),
        ("geometry properties", geometry_properties),
        ("QoS 2 flow with geolocation", qos2_flow_with_geo),
        ("fail-closed filtering", fail_closed),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    println!("\nacceptance criteria");
    for (i, (name, f)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = started.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {} PASS  {name}: {detail} [{secs:.1}s]", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {} FAIL  {name}: {why} [{secs:.1}s]", i + 1);
            }
        }
    }
    println!("{} passed, {failed} failed\n", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
