use std::io::{self, Read, Write};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use mqttg::broker::{BrokerConfig, Server, UnknownLocationPolicy, DEFAULT_PORT};
use mqttg::client::tcp::TcpClient;
use mqttg::client::{ClientConfig, ClientError, FixedLocation, LocationProvider, NoLocation};
use mqttg::codec::{decode_packet, frame_len, GeolocationBlock, Mode, QoS};
use mqttg_cli::{describe, exit, message_line, parse_fence_file};
use mqttg_sim::{run_with, SimOptions};

const TIMEOUT: Duration = Duration::from_secs(10);

#[derive(Parser)]
#[command(
    name = "mqttg",
    version,
    about = "MQTT 3.1.1 with geolocation and geofenced routing"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a broker. Routing decisions go to stdout as ROUTE lines.
    Broker {
        /// Address to listen on [default: 0.0.0.0:1883]
        #[arg(long)]
        listen: Option<SocketAddr>,
        /// key=value config file; flags override it
        #[arg(long)]
        config: Option<PathBuf>,
        /// Suppress deliveries whose fence check needs an unknown location
        #[arg(long)]
        fence_fail_closed: bool,
        /// Behave as a plain 3.1.1 broker and reject geolocation
        #[arg(long)]
        strict: bool,
    },
    /// Publish one message, as PUBLISHG when coordinates are given.
    Pub {
        #[arg(long)]
        topic: String,
        #[arg(long, default_value = "")]
        message: String,
        #[arg(long, default_value_t = 0, value_parser = clap::value_parser!(u8).range(0..=2))]
        qos: u8,
        #[arg(long)]
        retain: bool,
        #[command(flatten)]
        location: Location,
        #[arg(long, default_value_t = default_broker())]
        broker: String,
    },
    /// Subscribe and print `topic<TAB>payload<TAB>lat lon elev` per message.
    Sub {
        /// Topic filter, repeatable
        #[arg(long, required = true)]
        topic: Vec<String>,
        /// Fence file: `static` or `dynamic`, then one `lat lon` per line
        #[arg(long)]
        fence: Option<PathBuf>,
        #[command(flatten)]
        location: Location,
        #[arg(long, default_value_t = default_broker())]
        broker: String,
    },
    /// Dump an encoded packet.
    Decode {
        /// Packet bytes as hex, whitespace allowed
        #[arg(long, conflicts_with = "file", required_unless_present = "file")]
        hex: Option<String>,
        /// File holding raw packet bytes
        #[arg(long)]
        file: Option<PathBuf>,
        /// Decode as plain 3.1.1
        #[arg(long)]
        strict: bool,
    },
    /// Deterministic simulation.
    #[command(subcommand)]
    Sim(SimCommand),
}

#[derive(Subcommand)]
enum SimCommand {
    /// Run a scenario file and print CSV metrics.
    Run {
        file: PathBuf,
        /// Write the CSV here instead of stdout
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Write the routing log here, one ROUTE line per decision
        #[arg(long)]
        log: Option<PathBuf>,
        /// Probability that a packet is lost
        #[arg(long, default_value_t = 0.0)]
        drop: f64,
    },
}

#[derive(Args)]
struct Location {
    #[arg(long, requires = "lon", allow_negative_numbers = true)]
    lat: Option<f64>,
    #[arg(long, requires = "lat", allow_negative_numbers = true)]
    lon: Option<f64>,
    /// Elevation in metres, with --lat/--lon
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    elev: f32,
}

impl Location {
    fn block(&self) -> Option<GeolocationBlock> {
        Some(GeolocationBlock::new(self.lat?, self.lon?, self.elev))
    }
}

fn default_broker() -> String {
    format!("127.0.0.1:{DEFAULT_PORT}")
}

fn fail(code: u8, msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("mqttg: {msg}");
    ExitCode::from(code)
}

fn stop_flag() -> Arc<AtomicBool> {
    let stop = Arc::new(AtomicBool::new(false));
    let s = stop.clone();
    if let Err(e) = ctrlc::set_handler(move || s.store(true, Ordering::SeqCst)) {
        log::warn!("no signal handler: {e}");
    }
    stop
}

fn broker(
    listen: Option<SocketAddr>,
    config: Option<PathBuf>,
    fail_closed: bool,
    strict: bool,
) -> ExitCode {
    let mut cfg = match config {
        Some(path) => match std::fs::read_to_string(&path)
            .map_err(|e| e.to_string())
            .and_then(|t| BrokerConfig::parse(&t).map_err(|e| e.to_string()))
        {
            Ok(c) => c,
            Err(e) => return fail(exit::USAGE, format!("{}: {e}", path.display())),
        },
        None => BrokerConfig::default(),
    };
    if let Some(addr) = listen {
        cfg.listen = addr;
    }
    if fail_closed {
        cfg.unknown_location = UnknownLocationPolicy::FailClosed;
    }
    cfg.strict |= strict;
    let requested = cfg.listen;
    let server = match Server::bind(cfg) {
        Ok(s) => s,
        Err(e) => return fail(exit::USAGE, format!("cannot listen on {requested}: {e}")),
    };
    match server.local_addr() {
        Ok(addr) => eprintln!("listening on {addr}"),
        Err(e) => return fail(exit::USAGE, e),
    }
    let stop = stop_flag();
    let out = io::stdout();
    let result = server.run(stop, |record| {
        let _ = writeln!(out.lock(), "{record}");
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(exit::FAILURE, e),
    }
}

fn client_config(role: &str, broker: String) -> ClientConfig {
    ClientConfig {
        broker,
        ..ClientConfig::new(format!("mqttg-{role}-{}", std::process::id()))
    }
}

/// Shares a fixed location when coordinates were given.
fn location_provider(location: &Location, cfg: &mut ClientConfig) -> Box<dyn LocationProvider> {
    match location.block() {
        Some(g) => {
            cfg.share_location = true;
            Box::new(FixedLocation(g))
        }
        None => Box::new(NoLocation),
    }
}

fn publish(
    topic: String,
    message: String,
    qos: u8,
    retain: bool,
    location: Location,
    broker: String,
) -> Result<(), ClientError> {
    let qos = QoS::from_u8(qos).unwrap_or_default();
    let mut cfg = client_config("pub", broker);
    let provider = location_provider(&location, &mut cfg);
    let mut client = TcpClient::connect(cfg, provider, TIMEOUT)?;
    client.publish(&topic, message, qos, retain, TIMEOUT)?;
    client.disconnect()
}

fn subscribe(
    topics: Vec<String>,
    fence: Option<PathBuf>,
    location: Location,
    broker: String,
) -> ExitCode {
    let fence = match fence {
        Some(path) => match std::fs::read_to_string(&path)
            .map_err(|e| e.to_string())
            .and_then(|t| parse_fence_file(&t))
        {
            Ok(f) => Some(f),
            Err(e) => return fail(exit::USAGE, format!("{}: {e}", path.display())),
        },
        None => None,
    };
    let mut cfg = client_config("sub", broker);
    let provider = location_provider(&location, &mut cfg);
    let run = || -> Result<(), ClientError> {
        let mut client = TcpClient::connect(cfg, provider, TIMEOUT)?;
        if let Some(f) = &fence {
            client.set_fence(f, TIMEOUT)?;
        }
        // QoS 2 so each message arrives at the QoS it was published with
        let filters: Vec<(String, QoS)> =
            topics.into_iter().map(|t| (t, QoS::ExactlyOnce)).collect();
        client.subscribe(&filters, TIMEOUT)?;
        eprintln!("subscribed");
        let stop = stop_flag();
        let out = io::stdout();
        while !stop.load(Ordering::SeqCst) {
            if let Some(m) = client.next_message(Some(Duration::from_millis(200)))? {
                let line = message_line(&m.topic, &m.payload, m.geolocation.as_ref());
                if writeln!(out.lock(), "{line}").is_err() {
                    break;
                }
            }
        }
        client.disconnect()
    };
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(exit::FAILURE, e),
    }
}

fn decode(hex_text: Option<String>, file: Option<PathBuf>, strict: bool) -> ExitCode {
    let bytes = match (hex_text, file) {
        (Some(h), _) => {
            let cleaned: String = h.split_whitespace().collect();
            let cleaned = cleaned.strip_prefix("0x").unwrap_or(&cleaned);
            match hex::decode(cleaned) {
                Ok(b) => b,
                Err(e) => return fail(exit::FAILURE, format!("bad hex: {e}")),
            }
        }
        (None, Some(path)) => {
            let mut buf = Vec::new();
            let read = if path.as_os_str() == "-" {
                io::stdin().read_to_end(&mut buf).map(|_| ())
            } else {
                std::fs::File::open(&path).and_then(|mut f| f.read_to_end(&mut buf).map(|_| ()))
            };
            if let Err(e) = read {
                return fail(exit::USAGE, format!("{}: {e}", path.display()));
            }
            buf
        }
        (None, None) => return fail(exit::USAGE, "give --hex or --file"),
    };
    let mode = if strict {
        Mode::Strict311
    } else {
        Mode::Extended
    };
    if bytes.is_empty() {
        return fail(exit::FAILURE, "Truncated: no input bytes");
    }
    let mut rest = bytes.as_slice();
    let out = io::stdout();
    while !rest.is_empty() {
        let len = match frame_len(rest) {
            Ok(Some(n)) if n <= rest.len() => n,
            Ok(_) => return fail(exit::FAILURE, "Truncated"),
            Err(e) => return fail(exit::FAILURE, e),
        };
        match decode_packet(&rest[..len], mode) {
            Ok((p, _)) => {
                let _ = write!(out.lock(), "{}", describe(&p, &rest[..len]));
            }
            Err(e) => return fail(exit::FAILURE, e),
        }
        rest = &rest[len..];
    }
    ExitCode::SUCCESS
}

fn sim_run(file: PathBuf, csv: Option<PathBuf>, log_path: Option<PathBuf>, drop: f64) -> ExitCode {
    let scenario = match std::fs::read_to_string(&file)
        .map_err(|e| e.to_string())
        .and_then(|t| mqttg_sim::file::parse(&t).map_err(|e| e.to_string()))
    {
        Ok(s) => s,
        Err(e) => return fail(exit::USAGE, format!("{}: {e}", file.display())),
    };
    if !(0.0..1.0).contains(&drop) {
        return fail(exit::USAGE, "--drop must be in [0, 1)");
    }
    let opts = SimOptions {
        drop_probability: drop,
        ..SimOptions::default()
    };
    let run = match run_with(&scenario, opts) {
        Ok(r) => r,
        Err(e) => return fail(exit::USAGE, e),
    };
    if !run.settled {
        log::warn!("some QoS flows did not finish before the drain limit");
    }
    if let Some(path) = log_path {
        let text: String = run.log.iter().map(|e| format!("{e}\n")).collect();
        if let Err(e) = std::fs::write(&path, text) {
            return fail(exit::FAILURE, format!("{}: {e}", path.display()));
        }
    }
    let csv_text = run.metrics.csv();
    match csv {
        Some(path) => {
            if let Err(e) = std::fs::write(&path, &csv_text) {
                return fail(exit::FAILURE, format!("{}: {e}", path.display()));
            }
            print!("{}", run.metrics.report());
        }
        None => print!("{csv_text}"),
    }
    ExitCode::SUCCESS
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Broker {
            listen,
            config,
            fence_fail_closed,
            strict,
        } => broker(listen, config, fence_fail_closed, strict),
        Command::Pub {
            topic,
            message,
            qos,
            retain,
            location,
            broker,
        } => match publish(topic, message, qos, retain, location, broker) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => fail(exit::FAILURE, e),
        },
        Command::Sub {
            topic,
            fence,
            location,
            broker,
        } => subscribe(topic, fence, location, broker),
        Command::Decode { hex, file, strict } => decode(hex, file, strict),
        Command::Sim(SimCommand::Run {
            file,
            csv,
            log,
            drop,
        }) => sim_run(file, csv, log, drop),
    }
}
