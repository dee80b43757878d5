use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use chrono::Utc;
use clap::{Parser, Subcommand};

use twinbridge::harness::config::{load_config, ConfigError, TerrainConfig};
use twinbridge::harness::sample::{generate_sample, DEFAULT_SAMPLE_SIZE, DEFAULT_SEED};
use twinbridge::harness::{build_terrain, poll_client, run_verify, start_gateway, VerifyOptions};
use twinbridge::metocean::{
    latest_cycle, parse_ascii, ForecastClient, HttpTransport, MetoceanError, ParamRequest, DEFAULT_BASE_URL,
    DEFAULT_TIMEOUT,
};
use twinbridge::telemetry::parse_timestamp;
use twinbridge::tiles::{NormScope, DEFAULT_TILE_SIZE};

const EXIT_FAILURE: u8 = 1;
const EXIT_INPUT: u8 = 2;

#[derive(Parser)]
#[command(name = "twinbridge", version, about = "Digital twin data-integration backend")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Static terrain pipeline.
    #[command(subcommand)]
    Terrain(TerrainCommand),
    /// Run the gateway with the feeds named in a config file.
    Serve {
        #[arg(long)]
        config: PathBuf,
    },
    /// Fetch (or parse offline) a point forecast and print it as `lead_hour,value`.
    FetchForecast {
        /// Parameter name; repeat for several.
        #[arg(long = "param", required = true)]
        params: Vec<String>,
        /// Reference time, e.g. 2024-01-15T13:30Z. Defaults to now.
        #[arg(long)]
        at: Option<String>,
        /// Parse this DODS ASCII body instead of making a request.
        #[arg(long)]
        offline_fixture: Option<PathBuf>,
        #[arg(long, default_value = DEFAULT_BASE_URL)]
        base_url: String,
        /// Hours after a cycle's start before it counts as published.
        #[arg(long, default_value_t = 0)]
        delay_hours: u64,
        /// Grid y index.
        #[arg(long, default_value_t = 0)]
        y: u32,
        /// Grid x index.
        #[arg(long, default_value_t = 0)]
        x: u32,
    },
    /// Poll a snapshot endpoint and print a report.
    Poll {
        #[arg(long)]
        url: String,
        #[arg(long, default_value_t = 1000)]
        period_ms: u64,
        #[arg(long, default_value_t = 10.0)]
        duration_s: f64,
    },
    /// Run the acceptance suite against a config and print a pass/fail table.
    Verify {
        #[arg(long)]
        config: PathBuf,
        /// Directory for terrain builds (temporary by default).
        #[arg(long)]
        work_dir: Option<PathBuf>,
        /// Keep the temporary work directory.
        #[arg(long)]
        keep: bool,
    },
    /// Write the synthetic sample dataset.
    GenSample {
        #[arg(short = 'o', long = "out")]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_SAMPLE_SIZE)]
        size: usize,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
    },
}

#[derive(Subcommand)]
enum TerrainCommand {
    /// Merge raster and contours, slice into tiles, write the tile set.
    Build {
        raster: PathBuf,
        contours: PathBuf,
        #[arg(long)]
        color: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_TILE_SIZE)]
        tile_size: usize,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        sea_level: f64,
        /// global or per_tile
        #[arg(long, default_value = "global")]
        normalization: String,
        #[arg(short = 'o', long = "out")]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(code) => ExitCode::from(code),
    }
}

fn fail(code: u8, msg: impl std::fmt::Display) -> u8 {
    eprintln!("error: {msg}");
    code
}

fn runtime() -> tokio::runtime::Runtime {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .expect("tokio runtime")
}

fn config_or_exit(path: &std::path::Path) -> Result<twinbridge::harness::Config, u8> {
    load_config(path).map_err(|e| match e {
        ConfigError::Io { .. } => fail(EXIT_INPUT, e),
        ConfigError::Invalid(_) => fail(EXIT_INPUT, format!("{}: {e}", path.display())),
    })
}

fn run(cmd: Command) -> Result<(), u8> {
    match cmd {
        Command::Terrain(TerrainCommand::Build {
            raster,
            contours,
            color,
            tile_size,
            sea_level,
            normalization,
            out,
        }) => {
            let normalization = NormScope::parse(&normalization)
                .ok_or_else(|| fail(EXIT_INPUT, format!("unknown normalization `{normalization}`")))?;
            if tile_size == 0 {
                return Err(fail(EXIT_INPUT, "--tile-size must be positive"));
            }
            let job = TerrainConfig {
                raster,
                contours,
                color,
                tile_size,
                sea_level,
                normalization,
            };
            let summary = build_terrain(&job, &out).map_err(|e| {
                let code = if e.is_input_error() { EXIT_INPUT } else { EXIT_FAILURE };
                fail(code, e)
            })?;
            println!("{summary}");
            println!("output: {}", out.display());
            Ok(())
        }
        Command::Serve { config } => {
            let cfg = config_or_exit(&config)?;
            if cfg.terrain.is_some() && cfg.tile_dir.is_none() {
                tracing::warn!("terrain.raster is only used by verify; set terrain.tile_dir to serve tiles");
            }
            runtime().block_on(async {
                let mut gw = start_gateway(&cfg).await.map_err(|e| {
                    let code = if e.is_input_error() { EXIT_INPUT } else { EXIT_FAILURE };
                    fail(code, e)
                })?;
                gw.start_feeds().map_err(|e| fail(EXIT_INPUT, e))?;
                println!("serving at {}/", gw.server.base_url());
                for p in gw.server_paths() {
                    println!("  {}{p}", gw.server.base_url());
                }
                wait_for_signal().await;
                eprintln!("shutting down");
                gw.shutdown().await.map_err(|e| fail(EXIT_FAILURE, e))?;
                Ok(())
            })
        }
        Command::FetchForecast {
            params,
            at,
            offline_fixture,
            base_url,
            delay_hours,
            y,
            x,
        } => {
            let now = match at {
                Some(s) => parse_timestamp(&s).ok_or_else(|| fail(EXIT_INPUT, format!("cannot parse --at `{s}`")))?,
                None => Utc::now(),
            };
            let reqs = params
                .iter()
                .map(|p| ParamRequest::point_series(p.clone(), y, x))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| fail(EXIT_INPUT, e))?;
            let delay = Duration::from_secs(delay_hours * 3600);
            let (url, series) = match offline_fixture {
                Some(path) => {
                    let cycle = latest_cycle(now, delay);
                    let url = twinbridge::metocean::build_url_with_base(&base_url, &cycle, &reqs)
                        .map_err(|e| fail(EXIT_INPUT, e))?;
                    println!("{url}");
                    let body = std::fs::read_to_string(&path)
                        .map_err(|e| fail(EXIT_INPUT, format!("{}: {e}", path.display())))?;
                    let series = parse_ascii(&body, &reqs, cycle)
                        .map_err(|e| fail(EXIT_INPUT, format!("{}: {e}", path.display())))?;
                    (url, series)
                }
                None => {
                    let transport = HttpTransport::new(DEFAULT_TIMEOUT).map_err(|e| fail(EXIT_FAILURE, e))?;
                    let client = ForecastClient::new(Arc::new(transport))
                        .with_base_url(base_url)
                        .with_publication_delay(delay);
                    match client.forecast(now, &reqs) {
                        Ok((outcome, series)) => {
                            if outcome.fell_back {
                                eprintln!("latest cycle unavailable, fell back to {}", outcome.cycle);
                            }
                            println!("{}", outcome.url);
                            (outcome.url, series)
                        }
                        Err(e) => {
                            let code = match e {
                                MetoceanError::Status { .. }
                                | MetoceanError::Timeout { .. }
                                | MetoceanError::Transport { .. } => EXIT_FAILURE,
                                _ => EXIT_INPUT,
                            };
                            return Err(fail(code, e));
                        }
                    }
                }
            };
            tracing::debug!(%url, "parsed");
            let multi = series.len() > 1;
            for s in &series {
                if multi {
                    println!("# {} ({})", s.param, s.units);
                }
                for (h, v) in s.lead_hours.iter().zip(&s.values) {
                    println!("{h},{v}");
                }
            }
            Ok(())
        }
        Command::Poll {
            url,
            period_ms,
            duration_s,
        } => {
            if period_ms == 0 || !(duration_s.is_finite() && duration_s >= 0.0) {
                return Err(fail(EXIT_INPUT, "period and duration must be positive"));
            }
            let report = runtime().block_on(poll_client(
                &url,
                Duration::from_millis(period_ms),
                Duration::from_secs_f64(duration_s),
            ));
            println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            Ok(())
        }
        Command::Verify { config, work_dir, keep } => {
            let cfg = config_or_exit(&config)?;
            let report = runtime().block_on(run_verify(&cfg, &VerifyOptions { work_dir, keep }));
            println!("{}", report.table());
            if report.passed() {
                Ok(())
            } else {
                Err(EXIT_FAILURE)
            }
        }
        Command::GenSample { out, size, seed } => {
            if size < 16 {
                return Err(fail(EXIT_INPUT, "--size must be at least 16"));
            }
            let files = generate_sample(&out, size, seed).map_err(|e| fail(EXIT_FAILURE, format!("{}: {e}", out.display())))?;
            for f in files {
                println!("{}", f.display());
            }
            Ok(())
        }
    }
}

async fn wait_for_signal() {
    #[cfg(unix)]
    {
        use tokio::signal::unix::{signal, SignalKind};
        let mut term = signal(SignalKind::terminate()).expect("SIGTERM handler");
        tokio::select! {
            _ = tokio::signal::ctrl_c() => {}
            _ = term.recv() => {}
        }
    }
    #[cfg(not(unix))]
    {
        let _ = tokio::signal::ctrl_c().await;
    }
}
