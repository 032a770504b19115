//! Line-oriented admin protocol.
//!
//! ```text
//! ADD-FENCE <fence line>          -> OK | ERR <reason>
//! CLEAR-FENCE <client_id> <topic> -> OK <removed>
//! DUMP-LOCATIONS                  -> CSV header, one row per client, END
//! ```

use std::io::{self, BufRead, BufReader, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::str::FromStr;

use mqttg_core::Broker;

use crate::fences::FenceSpec;

pub const LOCATION_HEADER: [&str; 8] = [
    "client_id",
    "lat",
    "lon",
    "elev",
    "received_at",
    "cumulative_distance_m",
    "last_speed_kmh",
    "fixes",
];

#[derive(Debug, Clone, PartialEq)]
pub enum AdminCommand {
    AddFence(FenceSpec),
    ClearFence { owner: String, topic: String },
    DumpLocations,
}

impl FromStr for AdminCommand {
    type Err = String;

    fn from_str(line: &str) -> Result<Self, String> {
        let line = line.trim();
        let (verb, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
        match verb {
            "ADD-FENCE" => rest.parse().map(AdminCommand::AddFence).map_err(|e| e.to_string()),
            "CLEAR-FENCE" => match rest.split_whitespace().collect::<Vec<_>>()[..] {
                [owner, topic] => Ok(AdminCommand::ClearFence { owner: owner.into(), topic: topic.into() }),
                _ => Err("usage: CLEAR-FENCE <client_id> <topic>".into()),
            },
            "DUMP-LOCATIONS" if rest.trim().is_empty() => Ok(AdminCommand::DumpLocations),
            _ => Err(format!("unknown command `{verb}`")),
        }
    }
}

/// Runs a command against the broker and returns the full response,
/// newline-terminated.
pub fn execute(broker: &mut Broker, cmd: AdminCommand) -> String {
    match cmd {
        AdminCommand::AddFence(f) => match broker.register_polygon(&f.owner, &f.topic, f.polygon) {
            Ok(()) => "OK\n".into(),
            Err(e) => format!("ERR {e}\n"),
        },
        AdminCommand::ClearFence { owner, topic } => {
            format!("OK {}\n", broker.clear_polygons(&owner, &topic))
        }
        AdminCommand::DumpLocations => {
            let mut w = csv::Writer::from_writer(Vec::new());
            let mut rows: Vec<_> = broker.locations().iter().collect();
            rows.sort_by(|a, b| a.client_id.cmp(&b.client_id));
            let written = w.write_record(LOCATION_HEADER).and_then(|_| {
                rows.iter().try_for_each(|r| {
                    w.write_record([
                        r.client_id.clone(),
                        r.location.latitude.to_string(),
                        r.location.longitude.to_string(),
                        r.location.elevation.to_string(),
                        r.received_at.to_string(),
                        r.cumulative_distance.to_string(),
                        r.last_speed_kmh.map(|s| s.to_string()).unwrap_or_default(),
                        r.fixes.to_string(),
                    ])
                })
            });
            match written.and_then(|_| w.into_inner().map_err(|e| e.into_error().into())) {
                Ok(bytes) => String::from_utf8_lossy(&bytes).into_owned() + "END\n",
                Err(e) => format!("ERR {e}\n"),
            }
        }
    }
}

/// Parses and executes one request line.
pub fn handle_line(broker: &mut Broker, line: &str) -> String {
    match line.parse() {
        Ok(cmd) => execute(broker, cmd),
        Err(e) => format!("ERR {e}\n"),
    }
}

/// One row of a DUMP-LOCATIONS response.
#[derive(Debug, Clone, PartialEq)]
pub struct LocationRow {
    pub client_id: String,
    pub latitude: f64,
    pub longitude: f64,
    pub elevation: f32,
    pub received_at: f64,
    pub cumulative_distance_m: f64,
    pub last_speed_kmh: Option<f64>,
    pub fixes: u64,
}

fn parse_dump(csv_text: &str) -> io::Result<Vec<LocationRow>> {
    let bad = |e: &dyn std::fmt::Display| io::Error::new(io::ErrorKind::InvalidData, e.to_string());
    let mut rows = Vec::new();
    for rec in csv::Reader::from_reader(csv_text.as_bytes()).records() {
        let rec = rec.map_err(|e| bad(&e))?;
        let num = |i: usize| rec.get(i).unwrap_or("").parse::<f64>().map_err(|e| bad(&e));
        rows.push(LocationRow {
            client_id: rec.get(0).unwrap_or("").to_string(),
            latitude: num(1)?,
            longitude: num(2)?,
            elevation: num(3)? as f32,
            received_at: num(4)?,
            cumulative_distance_m: num(5)?,
            last_speed_kmh: match rec.get(6) {
                Some("") | None => None,
                Some(_) => Some(num(6)?),
            },
            fixes: rec.get(7).unwrap_or("").parse().map_err(|e| bad(&e))?,
        });
    }
    Ok(rows)
}

/// A connection to a broker's admin socket.
pub struct AdminClient {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

impl AdminClient {
    pub fn connect(addr: impl ToSocketAddrs) -> io::Result<Self> {
        let writer = TcpStream::connect(addr)?;
        Ok(AdminClient { reader: BufReader::new(writer.try_clone()?), writer })
    }

    fn read_line(&mut self) -> io::Result<String> {
        let mut line = String::new();
        if self.reader.read_line(&mut line)? == 0 {
            return Err(io::ErrorKind::UnexpectedEof.into());
        }
        Ok(line)
    }

    /// Sends a single-line command and returns the single-line reply.
    pub fn command(&mut self, line: &str) -> io::Result<String> {
        writeln!(self.writer, "{}", line.trim())?;
        Ok(self.read_line()?.trim_end().to_string())
    }

    pub fn add_fence(&mut self, fence: &FenceSpec) -> io::Result<String> {
        self.command(&format!("ADD-FENCE {fence}"))
    }

    pub fn clear_fence(&mut self, owner: &str, topic: &str) -> io::Result<String> {
        self.command(&format!("CLEAR-FENCE {owner} {topic}"))
    }

    pub fn dump_locations(&mut self) -> io::Result<Vec<LocationRow>> {
        writeln!(self.writer, "DUMP-LOCATIONS")?;
        let mut text = String::new();
        loop {
            let line = self.read_line()?;
            match line.trim_end() {
                "END" => break,
                l if l.starts_with("ERR") => return Err(io::Error::other(l.to_string())),
                _ => text.push_str(&line),
            }
        }
        parse_dump(&text)
    }
}
