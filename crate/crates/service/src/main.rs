use std::path::{Path, PathBuf};
use std::process::ExitCode;

use failure::Failure;
use clap::{Parser, Subcommand};
use cobot_safety::config::SceneConfig;
use cobot_safety::recording::{self, RecordingError};
use cobot_safety::sim::simulate_session;
use cobot_safety_service::{driver, http, Controller};
use tracing_subscriber::EnvFilter;

#[derive(Debug, Parser)]
#[command(name = "cobot-safety", version, about = "Safety-zone monitor for a simulated human-robot cell")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Run the HTTP API and the 20 Hz loop.
    Serve {
        /// Scene config; the built-in default scene when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, env = "PORT", default_value_t = 8080)]
        port: u16,
        #[arg(long, env = "DATA_DIR", default_value = "sessions")]
        data_dir: PathBuf,
        #[arg(long, default_value = "127.0.0.1")]
        bind: String,
    },
    /// Run the pipeline headless on the simulated clock.
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Seconds of simulated time.
        #[arg(long, default_value_t = 10.0)]
        duration: f64,
        /// Overrides the config's rng_seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Write the session here.
        #[arg(long)]
        record: Option<PathBuf>,
        /// Header timestamp; fix it for byte-reproducible files.
        #[arg(long)]
        created_unix: Option<i64>,
    },
    /// Validate a session file and print its safety periods.
    Inspect { file: PathBuf },
}

mod failure {
    /// A message for stderr and a failing exit.
    #[derive(Debug)]
    pub struct Failure(pub String);

    impl<E: std::fmt::Display> From<E> for Failure {
        fn from(e: E) -> Self {
            Failure(e.to_string())
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<SceneConfig, Failure> {
    match path {
        Some(p) => SceneConfig::load(p).map_err(|e| Failure(format!("{}: {e}", p.display()))),
        None => Ok(SceneConfig::default()),
    }
}

fn now_unix() -> i64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs() as i64)
        .unwrap_or(0)
}

async fn serve(config: Option<PathBuf>, port: u16, data_dir: PathBuf, bind: String) -> Result<(), Failure> {
    let cfg = load_config(config.as_deref())?;
    std::fs::create_dir_all(&data_dir)
        .map_err(|e| Failure(format!("cannot create {}: {e}", data_dir.display())))?;
    let (handle, _task) = driver::spawn(Controller::new(cfg, &data_dir));
    let app = http::router(handle, &data_dir);
    let listener = tokio::net::TcpListener::bind((bind.as_str(), port)).await?;
    tracing::info!(addr = %listener.local_addr()?, data_dir = %data_dir.display(), "serving");
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

fn simulate(
    config: Option<PathBuf>,
    duration: f64,
    seed: Option<u64>,
    record: Option<PathBuf>,
    created_unix: Option<i64>,
) -> Result<(), Failure> {
    let mut cfg = load_config(config.as_deref())?;
    if let Some(seed) = seed {
        cfg.rng_seed = seed;
    }
    if !(duration.is_finite() && duration >= 0.0) {
        return Err(Failure(format!("duration must be non-negative, got {duration}")));
    }
    let ticks = (duration * cfg.rate_hz).round() as u64;
    let rec = simulate_session(&cfg, ticks, created_unix.unwrap_or_else(now_unix));
    let periods = rec.safety_periods()?;
    println!("{} samples over {:.2} s, seed {}", rec.samples.len(), ticks as f64 / cfg.rate_hz, cfg.rng_seed);
    for p in &periods {
        println!("safety period {:.3} s to {:.3} s ({:.3} s)", p.t_enter, p.t_exit, p.duration());
    }
    if let Some(path) = record {
        recording::write_session(&path, &rec)?;
        println!("recorded {}", path.display());
    }
    Ok(())
}

fn inspect(file: &Path) -> Result<(), Failure> {
    let rec = match recording::load(file) {
        Ok(rec) => rec,
        Err(RecordingError::Validation { report, .. }) => {
            println!("{}: invalid", file.display());
            println!("{report}");
            return Err(Failure("validation failed".into()));
        }
        Err(e) => return Err(Failure(format!("{}: {e}", file.display()))),
    };
    let report = recording::validate(&rec);
    println!(
        "{}: {} samples, {:.2} s at {} Hz, {} joints",
        file.display(),
        rec.samples.len(),
        rec.duration(),
        rec.meta.rate_hz,
        rec.meta.chain.dof()
    );
    println!("{report}");
    let periods = rec.safety_periods()?;
    println!("{} safety period(s)", periods.len());
    for p in &periods {
        println!("  {:.3} s to {:.3} s ({:.3} s)", p.t_enter, p.t_exit, p.duration());
    }
    let mismatches = {
        let monitor = rec.meta.safety_monitor();
        let mut state = Default::default();
        let mut n = 0usize;
        for s in &rec.samples {
            let out = monitor.step(&state, &s.observation())?;
            n += usize::from(out.state.flag != s.safety_flag);
            state = out.state;
        }
        n
    };
    println!("recorded/recomputed flag mismatches: {mismatches}");
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    let result = match Cli::parse().command {
        Cmd::Serve {
            config,
            port,
            data_dir,
            bind,
        } => tokio::runtime::Runtime::new()
            .map_err(Failure::from)
            .and_then(|rt| rt.block_on(serve(config, port, data_dir, bind))),
        Cmd::Simulate {
            config,
            duration,
            seed,
            record,
            created_unix,
        } => simulate(config, duration, seed, record, created_unix),
        Cmd::Inspect { file } => inspect(&file),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
