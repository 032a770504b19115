use std::net::{IpAddr, SocketAddr};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::error::ErrorKind;
use clap::{ArgGroup, Args, CommandFactory, Parser, Subcommand, ValueEnum};
use mqttg::client::{Client, ClientConfig};
use mqttg::core::{GeoConstraint, GeoLocation, GeoPoint, QoS, TopicFilter};
use mqttg::eventlog::EventLog;
use mqttg::fences::parse_fence_file;
use mqttg::replay::{self, ReplayOptions};
use mqttg::route::{self, Route, RouteSpec, Shape};
use mqttg::server::{self, BrokerConfig};

#[derive(Parser)]
#[command(name = "mqttg", version, about = "MQTT 3.1.1 with embedded geolocation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the broker.
    Broker(BrokerArgs),
    /// Publish one message.
    Pub(PubArgs),
    /// Subscribe and print incoming messages.
    Sub(SubArgs),
    /// Replay a route file and compare distances.
    Replay(ReplayArgs),
    /// Generate a synthetic route file.
    RouteGen(RouteGenArgs),
}

#[derive(Args)]
struct BrokerArgs {
    #[arg(long, default_value = "0.0.0.0")]
    bind: IpAddr,
    #[arg(long, default_value_t = server::DEFAULT_PORT)]
    port: u16,
    /// Admin socket address.
    #[arg(long, default_value = "127.0.0.1:1884")]
    admin: SocketAddr,
    #[arg(long)]
    no_admin: bool,
    /// Fence configuration file loaded at startup.
    #[arg(long)]
    fences: Option<PathBuf>,
    /// Also write the event log to this CSV file.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Do not print the event log on stdout.
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct Conn {
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long, default_value_t = server::DEFAULT_PORT)]
    port: u16,
    /// Client id; random when omitted.
    #[arg(long)]
    id: Option<String>,
    #[arg(long, default_value_t = 60)]
    keep_alive: u16,
    /// Attach this latitude (with `--lon`) to every packet that can carry a location.
    #[arg(long, requires = "lon", allow_hyphen_values = true)]
    lat: Option<f64>,
    #[arg(long, requires = "lat", allow_hyphen_values = true)]
    lon: Option<f64>,
    /// Elevation in metres.
    #[arg(long, requires = "lat", allow_hyphen_values = true, default_value_t = 0.0)]
    elev: f32,
}

impl Conn {
    fn config(&self, prefix: &str) -> Result<ClientConfig, String> {
        let id = self.id.clone().unwrap_or_else(|| format!("{prefix}-{}", std::process::id()));
        let mut c = ClientConfig::new(id, self.host.clone(), self.port);
        c.keep_alive = self.keep_alive;
        if let (Some(lat), Some(lon)) = (self.lat, self.lon) {
            let g = GeoLocation::new(lat, lon, self.elev).map_err(|e| e.to_string())?;
            c = c.with_location(move || Some(g));
        }
        Ok(c)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum QosArg {
    #[value(name = "0")]
    Zero,
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
}

impl From<QosArg> for QoS {
    fn from(q: QosArg) -> QoS {
        match q {
            QosArg::Zero => QoS::AtMostOnce,
            QosArg::One => QoS::AtLeastOnce,
            QosArg::Two => QoS::ExactlyOnce,
        }
    }
}

#[derive(Args)]
struct PubArgs {
    #[command(flatten)]
    conn: Conn,
    #[arg(long, short)]
    topic: String,
    #[arg(long, short, default_value = "")]
    message: String,
    #[arg(long, short, value_enum, default_value = "0")]
    qos: QosArg,
    #[arg(long)]
    retain: bool,
}

#[derive(Args)]
struct SubArgs {
    #[command(flatten)]
    conn: Conn,
    #[arg(long, short)]
    topic: String,
    #[arg(long, short, value_enum, default_value = "0")]
    qos: QosArg,
    /// Only receive publishes sent from within `r` metres of `lat,lon`.
    #[arg(long, value_name = "R,LAT,LON", value_parser = parse_radius, allow_hyphen_values = true, conflicts_with = "outside_radius")]
    inside_radius: Option<(f32, GeoPoint)>,
    /// Only receive publishes sent from farther than `r` metres from `lat,lon`.
    #[arg(long, value_name = "R,LAT,LON", value_parser = parse_radius, allow_hyphen_values = true)]
    outside_radius: Option<(f32, GeoPoint)>,
    /// Exit after this many messages.
    #[arg(long)]
    count: Option<usize>,
}

#[derive(Args)]
struct ReplayArgs {
    route: PathBuf,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long, default_value_t = server::DEFAULT_PORT)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1:1884")]
    admin: String,
    /// Client id; unique per run when omitted.
    #[arg(long)]
    id: Option<String>,
    #[arg(long, default_value = "replay/position")]
    topic: String,
    #[arg(long, short, value_enum, default_value = "1")]
    qos: QosArg,
    /// Run route time this many times faster than real time.
    #[arg(long, default_value_t = 1.0)]
    speedup: f64,
}

#[derive(Args)]
#[command(group(ArgGroup::new("shape").required(true).args(["line_equator", "line_meridian", "circle"])))]
struct RouteGenArgs {
    /// Straight run due east along the equator from `--start`'s longitude.
    #[arg(long, requires = "length")]
    line_equator: bool,
    /// Straight run due north from `--start`.
    #[arg(long, requires = "length")]
    line_meridian: bool,
    /// Closed regular polygon inscribed in a circle around `--start`.
    #[arg(long, requires = "radius")]
    circle: bool,
    /// Line length in metres.
    #[arg(long)]
    length: Option<f64>,
    /// Circle radius in metres.
    #[arg(long)]
    radius: Option<f64>,
    /// Number of fixes (circle: vertices; a closing fix is added).
    #[arg(long, default_value_t = 10)]
    fixes: usize,
    /// Seconds between fixes.
    #[arg(long, default_value_t = 30.0)]
    interval: f64,
    /// Start point, or circle centre.
    #[arg(long, value_parser = parse_point, default_value = "0,0", allow_hyphen_values = true)]
    start: GeoPoint,
    #[arg(long, default_value_t = 0.0)]
    elev: f32,
    /// Write here instead of stdout.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

fn numbers(s: &str) -> Result<Vec<f64>, String> {
    s.split(',').map(|p| p.trim().parse::<f64>().map_err(|_| format!("`{p}` is not a number"))).collect()
}

fn parse_point(s: &str) -> Result<GeoPoint, String> {
    match numbers(s)?[..] {
        [lat, lon] => GeoPoint::new(lat, lon).map_err(|e| e.to_string()),
        _ => Err("expected lat,lon".into()),
    }
}

fn parse_radius(s: &str) -> Result<(f32, GeoPoint), String> {
    match numbers(s)?[..] {
        [r, lat, lon] if r.is_finite() && r >= 0.0 => Ok((r as f32, GeoPoint::new(lat, lon).map_err(|e| e.to_string())?)),
        [_, _, _] => Err("radius must be a non-negative number".into()),
        _ => Err("expected r,lat,lon".into()),
    }
}

fn run_broker(args: BrokerArgs) -> Result<(), String> {
    let mut config = BrokerConfig { bind: SocketAddr::new(args.bind, args.port), ..BrokerConfig::default() };
    config.admin = (!args.no_admin).then_some(args.admin);
    if let Some(path) = &args.fences {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        config.fences = parse_fence_file(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    }
    let mut log = EventLog::new();
    if !args.quiet {
        log = log.with_stdout().map_err(|e| e.to_string())?;
    }
    if let Some(path) = &args.log {
        log = log.with_file(path).map_err(|e| format!("{}: {e}", path.display()))?;
    }
    config.log = log;
    let handle = server::start(config).map_err(|e| e.to_string())?;
    eprintln!("mqttg broker listening on {}", handle.addr());
    if let Some(a) = handle.admin_addr() {
        eprintln!("admin socket on {a}");
    }
    handle.wait();
    Ok(())
}

fn run_pub(args: PubArgs) -> Result<(), String> {
    let client = Client::connect(args.conn.config("pub")?).map_err(|e| e.to_string())?;
    client.publish(&args.topic, args.message, args.qos.into(), args.retain).map_err(|e| e.to_string())?;
    client.disconnect().map_err(|e| e.to_string())
}

fn run_sub(args: SubArgs) -> Result<(), String> {
    let mut filter = TopicFilter::new(args.topic.clone(), args.qos.into());
    if let Some((r, c)) = args.inside_radius {
        filter = filter.with_geo(GeoConstraint::inside(r, c.latitude, c.longitude));
    }
    if let Some((r, c)) = args.outside_radius {
        filter = filter.with_geo(GeoConstraint::outside(r, c.latitude, c.longitude));
    }
    let client = Client::connect(args.conn.config("sub")?).map_err(|e| e.to_string())?;
    let granted = client.subscribe(filter).map_err(|e| e.to_string())?;
    eprintln!("subscribed to {} (granted {:?})", args.topic, granted);
    let mut received = 0;
    while args.count.is_none_or(|n| received < n) {
        let Some(m) = client.recv_timeout(Duration::from_millis(500)) else {
            if !client.is_connected() {
                return Err("connection closed".into());
            }
            continue;
        };
        let geo = m
            .publisher_geolocation
            .map(|g| format!(" [{},{},{}]", g.latitude, g.longitude, g.elevation))
            .unwrap_or_default();
        println!("{} {}{geo}", m.topic, String::from_utf8_lossy(&m.payload));
        received += 1;
    }
    client.disconnect().map_err(|e| e.to_string())
}

fn run_replay(args: ReplayArgs) -> Result<(), String> {
    let text = std::fs::read_to_string(&args.route).map_err(|e| format!("{}: {e}", args.route.display()))?;
    let route = Route::parse(&text).map_err(|e| format!("{}: {e}", args.route.display()))?;
    let opts = ReplayOptions {
        host: args.host,
        port: args.port,
        admin: args.admin,
        client_id: args.id.unwrap_or_else(replay::unique_client_id),
        topic: args.topic,
        qos: args.qos.into(),
        speedup: args.speedup,
    };
    let report = replay::replay(&route, &opts).map_err(|e| e.to_string())?;
    println!("{report}");
    Ok(())
}

fn run_route_gen(args: RouteGenArgs) -> Result<(), String> {
    // clap guarantees exactly one shape flag and its size argument.
    let shape = if args.circle {
        Shape::Circle { radius_m: args.radius.unwrap_or_default() }
    } else if args.line_meridian {
        Shape::MeridianLine { length_m: args.length.unwrap_or_default() }
    } else {
        Shape::EquatorLine { length_m: args.length.unwrap_or_default() }
    };
    let spec = RouteSpec { shape, fixes: args.fixes, interval_s: args.interval, start: args.start, elevation: args.elev };
    // Impossible shapes are argument mistakes, so report them like clap does.
    let csv = match route::generate(&spec) {
        Ok(r) => r.to_csv(),
        Err(e) => Cli::command().error(ErrorKind::ValueValidation, e).exit(),
    };
    match args.out {
        Some(path) => std::fs::write(&path, csv).map_err(|e| format!("{}: {e}", path.display())),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Broker(a) => run_broker(a),
        Command::Pub(a) => run_pub(a),
        Command::Sub(a) => run_sub(a),
        Command::Replay(a) => run_replay(a),
        Command::RouteGen(a) => run_route_gen(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mqttg: {e}");
            ExitCode::FAILURE
        }
    }
}
