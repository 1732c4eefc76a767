//! Command-line entry point.
//!
//! Exit codes: 0 success, 1 usage or input error, 2 environment or
//! connection error, 3 not found. Data goes to stdout, diagnostics to stderr.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use gasduino_core::aqi::{classify, indicator_for};
use gasduino_core::node::NodeConfig;
use log::{error, info};

use crate::agent::{self, RunSummary};
use crate::chart::{self, Latest, Point};
use crate::client::{self, Client, QueryError};
use crate::clock::{StopSignal, SystemClock};
use crate::config::{resolve_profile, FileConfig, CONFIG_ENV};
use crate::server::{self, ServerConfig, DEFAULT_HTTP_ADDR, DEFAULT_INGEST_ADDR};
use crate::transport::TcpConnector;

pub const EXIT_OK: u8 = 0;
pub const EXIT_USAGE: u8 = 1;
pub const EXIT_ENV: u8 = 2;
pub const EXIT_NOT_FOUND: u8 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "gasduino",
    version,
    about = "Air-quality telemetry: simulated MQ-135 nodes, ingestion server, queries"
)]
pub struct Cli {
    /// JSON config file with sensor.* and profile.* keys.
    #[arg(long, global = true, env = CONFIG_ENV)]
    pub config: Option<PathBuf>,
    /// Debug logging on stderr.
    #[arg(long, short, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the ingestion listener and HTTP query API.
    Server {
        #[arg(long, default_value = DEFAULT_INGEST_ADDR)]
        listen: String,
        #[arg(long, default_value = DEFAULT_HTTP_ADDR)]
        http: String,
        #[arg(long, default_value = "./data")]
        data_dir: PathBuf,
    },
    /// Run a simulated sensor node.
    Node {
        #[arg(long)]
        id: u16,
        #[arg(long, default_value = "127.0.0.1:7474")]
        server: String,
        /// night | day | constant:<ppm> | file:<path>
        #[arg(long)]
        profile: Option<String>,
        #[arg(long, default_value_t = 1000)]
        interval_ms: u64,
        #[arg(long, default_value_t = 1.0)]
        time_scale: f64,
        /// Simulated seconds to run; runs until interrupted when omitted.
        #[arg(long)]
        duration_s: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        noise_sigma: Option<f64>,
    },
    /// Query a running server.
    Query {
        #[arg(value_enum)]
        what: QueryKind,
        #[arg(long, default_value = "127.0.0.1:8080")]
        http: String,
        #[arg(long)]
        node: u16,
        #[arg(long)]
        from: Option<u64>,
        #[arg(long)]
        to: Option<u64>,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
    /// Classify a PPM value offline.
    Classify {
        #[arg(allow_hyphen_values = true)]
        ppm: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum QueryKind {
    Latest,
    Range,
    Alerts,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
    Chart,
}

fn init_logging(verbose: bool, default: &str) {
    let level = if verbose { "debug" } else { default };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .target(env_logger::Target::Stderr)
        .try_init();
}

fn load_file_config(path: Option<&PathBuf>) -> Result<FileConfig, ExitCode> {
    match path {
        None => Ok(FileConfig::default()),
        Some(p) => FileConfig::load(p).map_err(|e| {
            error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(EXIT_USAGE)
        }),
    }
}

fn emit(text: &str) -> ExitCode {
    let mut out = std::io::stdout().lock();
    if out
        .write_all(text.as_bytes())
        .and_then(|_| out.flush())
        .is_err()
    {
        return ExitCode::from(EXIT_ENV);
    }
    ExitCode::from(EXIT_OK)
}

/// Parses `args` (including the program name) and runs the command.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::from(EXIT_OK)
            };
        }
    };
    match cli.command {
        Command::Server {
            listen,
            http,
            data_dir,
        } => {
            init_logging(cli.verbose, "info");
            let file = match load_file_config(cli.config.as_ref()) {
                Ok(f) => f,
                Err(code) => return code,
            };
            let adc_bits = match file.curve() {
                Ok(c) => c.adc_bits,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(EXIT_USAGE);
                }
            };
            cmd_server(ServerConfig {
                listen,
                http,
                data_dir,
                adc_bits,
            })
        }
        Command::Node {
            id,
            server,
            profile,
            interval_ms,
            time_scale,
            duration_s,
            seed,
            noise_sigma,
        } => {
            init_logging(cli.verbose, "warn");
            let file = match load_file_config(cli.config.as_ref()) {
                Ok(f) => f,
                Err(code) => return code,
            };
            let config = NodeConfig {
                node_id: id,
                server_address: server,
                interval_ms,
                time_scale,
                ..NodeConfig::default()
            };
            cmd_node(
                config,
                &file,
                profile.as_deref(),
                duration_s,
                seed,
                noise_sigma,
            )
        }
        Command::Query {
            what,
            http,
            node,
            from,
            to,
            format,
        } => {
            init_logging(cli.verbose, "warn");
            cmd_query(what, &http, node, from, to, format)
        }
        Command::Classify { ppm } => {
            init_logging(cli.verbose, "warn");
            cmd_classify(&ppm)
        }
    }
}

pub fn cmd_server(config: ServerConfig) -> ExitCode {
    let rt = match tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
    {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: cannot start runtime: {e}");
            return ExitCode::from(EXIT_ENV);
        }
    };
    let bound = match rt.block_on(server::bind(&config)) {
        Ok(b) => b,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_ENV);
        }
    };
    for w in &bound.recovery().warnings {
        eprintln!("warning: {w}");
    }
    eprintln!(
        "gasduino server: ingestion {} http {} data {}",
        bound.ingest_addr(),
        bound.http_addr(),
        config.data_dir.display()
    );
    let result = rt.block_on(bound.serve(async {
        let _ = tokio::signal::ctrl_c().await;
        info!("interrupt received, shutting down");
    }));
    rt.shutdown_timeout(std::time::Duration::from_secs(2));
    match result {
        Ok(()) => ExitCode::from(EXIT_OK),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_ENV)
        }
    }
}

pub fn cmd_node(
    config: NodeConfig,
    file: &FileConfig,
    profile: Option<&str>,
    duration_s: Option<f64>,
    seed: Option<u64>,
    noise_sigma: Option<f64>,
) -> ExitCode {
    let usage = |msg: String| {
        eprintln!("error: {msg}");
        ExitCode::from(EXIT_USAGE)
    };
    let curve = match file.curve() {
        Ok(c) => c,
        Err(e) => return usage(e.to_string()),
    };
    let profile = match resolve_profile(profile, file, noise_sigma, seed) {
        Ok(p) => p,
        Err(e) => return usage(e.to_string()),
    };
    let duration_ms = match duration_s {
        None => None,
        Some(d) if d.is_finite() && d >= 0.0 => Some((d * 1000.0).round() as u64),
        Some(d) => {
            return usage(format!(
                "--duration-s must be a non-negative number, got {d}"
            ))
        }
    };
    let stop = StopSignal::new();
    let handler_stop = stop.clone();
    if let Err(e) = ctrlc::set_handler(move || handler_stop.raise()) {
        log::debug!("no interrupt handler: {e}");
    }
    let connector = TcpConnector::new(config.server_address.clone());
    let summary: RunSummary = match agent::run(
        config,
        profile,
        curve,
        connector,
        SystemClock::new(),
        duration_ms,
        &stop,
    ) {
        Ok(s) => s,
        Err(e) => return usage(e.to_string()),
    };
    let line = serde_json::to_string(&summary).expect("summary serializes");
    emit(&format!("{line}\n"))
}

fn query_failure(e: QueryError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(match e {
        QueryError::NotFound => EXIT_NOT_FOUND,
        QueryError::BadRequest(_) => EXIT_USAGE,
        QueryError::Unreachable(_) | QueryError::Server { .. } | QueryError::Decode(_) => EXIT_ENV,
    })
}

pub fn cmd_query(
    what: QueryKind,
    http: &str,
    node: u16,
    from: Option<u64>,
    to: Option<u64>,
    format: Format,
) -> ExitCode {
    let client = Client::new(http);
    let to_point = |r: &crate::api::RecordJson| Point {
        ts_ms: r.ts_ms,
        ppm: r.ppm,
    };
    let to_latest = |r: &crate::api::RecordJson| Latest {
        ppm: r.ppm,
        status: r.status.clone(),
        indicator: r.indicator.clone(),
    };
    match what {
        QueryKind::Latest => match client.latest(node) {
            Err(e) => query_failure(e),
            Ok(f) => match format {
                Format::Json => emit(&format!("{}\n", f.raw)),
                Format::Csv => emit(&client::records_csv(std::slice::from_ref(&f.value))),
                Format::Chart => emit(&chart::render(
                    &[to_point(&f.value)],
                    Some(&to_latest(&f.value)),
                )),
            },
        },
        QueryKind::Range => match client.range(node, from, to) {
            Err(e) => query_failure(e),
            Ok(f) => match format {
                Format::Json => emit(&format!("{}\n", f.raw)),
                Format::Csv => emit(&client::records_csv(&f.value.records)),
                Format::Chart => {
                    let points: Vec<_> = f.value.records.iter().map(to_point).collect();
                    let latest = f.value.records.last().map(to_latest);
                    emit(&chart::render(&points, latest.as_ref()))
                }
            },
        },
        QueryKind::Alerts => {
            if format == Format::Chart {
                eprintln!("error: alerts cannot be rendered as a chart; use json or csv");
                return ExitCode::from(EXIT_USAGE);
            }
            match client.alerts(node) {
                Err(e) => query_failure(e),
                Ok(f) => match format {
                    Format::Csv => emit(&client::alerts_csv(node, &f.value.alerts)),
                    _ => emit(&format!("{}\n", f.raw)),
                },
            }
        }
    }
}

/// `"<ppm> <status> <color>"` for a PPM value given on the command line.
pub fn classify_line(input: &str) -> Option<String> {
    let ppm: f64 = input.trim().parse().ok()?;
    let status = classify(ppm).ok()?;
    Some(format!(
        "{ppm} {} {}",
        status.category().name(),
        indicator_for(status).name()
    ))
}

pub fn cmd_classify(input: &str) -> ExitCode {
    match classify_line(input) {
        Some(line) => emit(&format!("{line}\n")),
        None => {
            eprintln!("error: {input:?} is not a non-negative PPM value");
            ExitCode::from(EXIT_USAGE)
        }
    }
}
