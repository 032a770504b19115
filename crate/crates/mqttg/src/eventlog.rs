//! CSV event log: one line per connect, disconnect, publish or location fix.

use std::fs::File;
use std::io::{self, Write};
use std::path::Path;

use mqttg_core::Event;

pub const HEADER: [&str; 8] =
    ["timestamp", "client_id", "event_kind", "lat", "lon", "elev", "segment_distance_m", "speed_kmh"];

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// The eight CSV fields of an event. Absent values are empty strings;
/// floats use the shortest exact representation.
pub fn record(e: &Event) -> [String; 8] {
    [
        format!("{:.6}", e.timestamp),
        e.client_id.clone(),
        e.kind.as_str().to_string(),
        opt(e.location.map(|l| l.latitude)),
        opt(e.location.map(|l| l.longitude)),
        opt(e.location.map(|l| l.elevation)),
        opt(e.distance_m),
        opt(e.speed_kmh),
    ]
}

/// Writes events to every attached sink, flushing after each line.
pub struct EventLog {
    sinks: Vec<csv::Writer<Box<dyn Write + Send>>>,
}

impl Default for EventLog {
    fn default() -> Self {
        EventLog::new()
    }
}

impl EventLog {
    /// A log with no sinks; events are dropped.
    pub fn new() -> Self {
        EventLog { sinks: Vec::new() }
    }

    pub fn add_sink(&mut self, w: Box<dyn Write + Send>) -> io::Result<()> {
        let mut w = csv::Writer::from_writer(w);
        w.write_record(HEADER)?;
        w.flush()?;
        self.sinks.push(w);
        Ok(())
    }

    pub fn with_stdout(mut self) -> io::Result<Self> {
        self.add_sink(Box::new(io::stdout()))?;
        Ok(self)
    }

    pub fn with_file(mut self, path: &Path) -> io::Result<Self> {
        self.add_sink(Box::new(File::create(path)?))?;
        Ok(self)
    }

    pub fn emit(&mut self, event: &Event) -> io::Result<()> {
        let row = record(event);
        for sink in &mut self.sinks {
            sink.write_record(&row)?;
            sink.flush()?;
        }
        Ok(())
    }
}
