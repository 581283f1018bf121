use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use nudge_core::canonical::to_canonical_string;
use nudge_core::config::Settings;
use nudge_core::domain::{ReasonerKind, SessionId};
use nudge_core::guardrails::fairness::audit_fairness;
use nudge_core::guardrails::trace::read_csv;
use nudge_core::orchestrator::Engine;
use nudge_core::sim::persona::{load_personas, simulate_session_as, Persona};
use nudge_core::sim::{random_personas, reference_personas, replay, HttpDriver, InProcessDriver, SessionDriver, SimulatedSession};

#[derive(Parser)]
#[command(name = "nudge", version, about = "Adaptive nudging engine: simulate, replay, serve, audit")]
struct Cli {
    /// Engine config (TOML). Defaults to the shipped configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate session fixtures from personas.
    Simulate {
        /// Persona file. Defaults to the shipped reference personas.
        #[arg(long)]
        personas: Option<PathBuf>,
        /// Extra randomly drawn personas.
        #[arg(long, default_value_t = 0)]
        count: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Replay fixtures against an engine and report the outcomes.
    Replay {
        /// Fixture file written by `simulate`. Without it the reference
        /// personas (plus `--count` random ones) are simulated on the fly.
        #[arg(long)]
        fixtures: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        count: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// `inproc` or the base URL of a running server.
        #[arg(long, default_value = "inproc")]
        engine: String,
        #[arg(long, default_value = "rule_based")]
        reasoner: String,
        /// Write the canonical JSON report here; the text summary goes to stdout.
        #[arg(long)]
        report: Option<PathBuf>,
        /// In-process only: dump the trace log as CSV.
        #[arg(long)]
        trace_csv: Option<PathBuf>,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
    },
    /// Audit a trace CSV for compliance-block disparity.
    Fairness {
        #[arg(long)]
        traces: PathBuf,
        #[arg(long, default_value = "device")]
        group_by: String,
        #[arg(long)]
        threshold: Option<f64>,
    },
}

#[derive(Serialize, Deserialize)]
struct Fixtures {
    seed: u64,
    sessions: Vec<SimulatedSession>,
}

fn settings(path: Option<&Path>) -> Result<Settings, String> {
    let s = match path {
        Some(p) => Settings::load(p).map_err(|e| e.to_string())?,
        None => Settings::default(),
    };
    Ok(s.with_env_overrides())
}

fn simulate_all(personas: &[Persona], seed: u64, settings: &Settings) -> Result<Vec<SimulatedSession>, String> {
    personas
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let id = SessionId::new(format!("{i:03}-{}", p.name));
            simulate_session_as(p, seed, id, settings).map_err(|e| e.to_string())
        })
        .collect()
}

fn personas(file: Option<&Path>, count: usize, seed: u64, settings: &Settings) -> Result<Vec<Persona>, String> {
    let mut list = match file {
        Some(p) => load_personas(p, settings).map_err(|e| e.to_string())?,
        None => reference_personas(),
    };
    list.extend(random_personas(count, seed, settings));
    Ok(list)
}

fn write_text(path: &Path, text: &str) -> Result<(), String> {
    std::fs::write(path, text).map_err(|e| format!("{}: {e}", path.display()))
}

fn run(cli: Cli) -> Result<ExitCode, String> {
    let settings = settings(cli.config.as_deref())?;
    match cli.command {
        Command::Simulate { personas: file, count, seed, out } => {
            let list = personas(file.as_deref(), count, seed, &settings)?;
            let sessions = simulate_all(&list, seed, &settings)?;
            let n = sessions.len();
            let json = to_canonical_string(&Fixtures { seed, sessions }).map_err(|e| e.to_string())?;
            write_text(&out, &json)?;
            println!("wrote {n} sessions to {}", out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Replay { fixtures, count, seed, engine, reasoner, report, trace_csv } => {
            let kind = ReasonerKind::parse_loose(&reasoner).map_err(|e| e.to_string())?;
            let sessions = match fixtures {
                Some(path) => {
                    let text = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
                    serde_json::from_str::<Fixtures>(&text).map_err(|e| format!("{}: {e}", path.display()))?.sessions
                }
                None => simulate_all(&personas(None, count, seed, &settings)?, seed, &settings)?,
            };
            let (result, inproc) = if engine == "inproc" {
                let driver = InProcessDriver::deterministic(settings).map_err(|e| e.to_string())?;
                (replay(&driver, &sessions, kind), Some(driver))
            } else {
                if trace_csv.is_some() {
                    return Err("--trace-csv needs --engine inproc; a server writes its own trace log".into());
                }
                let driver: Box<dyn SessionDriver> = Box::new(HttpDriver::new(&engine)?);
                (replay(driver.as_ref(), &sessions, kind), None)
            };
            print!("{}", result.to_text());
            if let Some(path) = report {
                write_text(&path, &to_canonical_string(&result).map_err(|e| e.to_string())?)?;
            }
            if let (Some(path), Some(driver)) = (trace_csv, inproc) {
                let file = std::fs::File::create(&path).map_err(|e| format!("{}: {e}", path.display()))?;
                driver.engine().traces().write_csv_to(file).map_err(|e| e.to_string())?;
            }
            Ok(if result.completed == result.sessions { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Command::Serve { addr } => {
            let engine = Arc::new(Engine::from_settings(settings).map_err(|e| e.to_string())?);
            let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().map_err(|e| e.to_string())?;
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind(&addr).await.map_err(|e| format!("{addr}: {e}"))?;
                tracing::info!(%addr, "listening");
                nudge_core::orchestrator::http::serve(engine, listener).await.map_err(|e| e.to_string())
            })?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Fairness { traces, group_by, threshold } => {
            let file = std::fs::File::open(&traces).map_err(|e| format!("{}: {e}", traces.display()))?;
            let records = read_csv(file).map_err(|e| e.to_string())?;
            let report = audit_fairness(&records, &group_by, threshold.unwrap_or(settings.fairness.threshold))
                .map_err(|e| e.to_string())?;
            println!("{}", to_canonical_string(&report).map_err(|e| e.to_string())?);
            // Flagged disparity exits 2 so scripts can gate on it.
            Ok(if report.flagged { ExitCode::from(2) } else { ExitCode::SUCCESS })
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("nudge: {e}");
            ExitCode::FAILURE
        }
    }
}
