use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use sketchnav_core::agent::{train, write_log_csv, Checkpoint, TrainConfig};
use sketchnav_core::command::{parse_instruction, HttpTransport, LlmBackend};
use sketchnav_core::constraints::SemanticMap;
use sketchnav_core::service::protocol::{ScenarioSource, PROTOCOL_SCHEMA};
use sketchnav_core::service::{
    evaluate, replay, write_report, Driver, Envelope, EventLog, Inbound, Metrics, Outbound, Outcome, Scenario, ServeOptions,
    Session, SessionConfig,
};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

#[derive(Parser)]
#[command(name = "sketchnav", version, about = "Language- and sketch-driven robot navigation")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a policy in the randomized environment.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "checkpoint.json")]
        out: PathBuf,
        /// Per-episode training log (CSV).
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a scenario's tests.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
        /// Feed the policy the physical scan only.
        #[arg(long)]
        no_ci: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Metrics JSON for `report`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a live session over TCP (length-prefixed JSON frames).
    Serve {
        #[arg(long, default_value_t = 7878)]
        port: u16,
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        realtime: bool,
        #[arg(long)]
        no_ci: bool,
        /// Write the session event log here on exit.
        #[arg(long)]
        record: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
    /// Replay an event log and check the frames match bit for bit.
    Replay {
        #[arg(long)]
        log: PathBuf,
    },
    /// Turn metrics JSON files into a CSV report.
    Report {
        #[arg(long = "in", required = true, num_args = 1..)]
        input: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also write trajectory and success-rate SVGs next to the CSV.
        #[arg(long)]
        plots: bool,
    },
    /// Parse one instruction against a semantic map.
    Parse {
        #[arg(long)]
        map: PathBuf,
        #[arg(long = "pedestrian")]
        pedestrians: Vec<String>,
        /// Use the HTTP language backend configured by environment variables.
        #[arg(long)]
        llm: bool,
        text: String,
    },
    /// Print the wire protocol's JSON schema.
    Schema,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &PathBuf) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn print_rates(label: &str, m: &Metrics) -> Result<()> {
    let r = m.rates()?;
    let cells: Vec<String> = Outcome::ALL.iter().map(|&o| format!("{} {:.1}%", o.label(), 100.0 * r.get(o))).collect();
    println!("{label}: {} episodes | {}", m.episodes.len(), cells.join(" | "));
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().cmd {
        Cmd::Train { config, seed, out, log } => {
            let mut cfg: TrainConfig = read_json(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let mut last = 0;
            let result = train(&cfg, Some(&out), &mut |row| {
                if row.step / 5000 != last {
                    last = row.step / 5000;
                    log::info!(
                        "step {:>7} episode {:>5} success {:.2} return {:7.2} alpha {:.4}",
                        row.step,
                        row.episode,
                        row.success_rate,
                        row.ret,
                        row.alpha
                    );
                }
            })?;
            if let Some(path) = log {
                write_log_csv(&result.log, &path)?;
            }
            let last = result.log.last().map(|r| r.success_rate).unwrap_or(0.0);
            println!("trained {} steps, {} episodes, trailing success {:.3}; checkpoint {}", result.steps, result.log.len(), last, out.display());
        }
        Cmd::Eval { checkpoint, scenario, episodes, no_ci, seed, out } => {
            let ck = Checkpoint::load(&checkpoint)?;
            let s = Scenario::load(&scenario)?;
            let m = evaluate(&ck, &s, episodes, !no_ci, seed)?;
            print_rates(if no_ci { "physical-only" } else { "fused" }, &m)?;
            if let Some(p) = out {
                std::fs::write(&p, serde_json::to_vec_pretty(&m)?)?;
            }
        }
        Cmd::Serve { port, scenario, checkpoint, realtime, no_ci, record, host } => {
            let policy = match &checkpoint {
                Some(p) => Some(Checkpoint::load(p)?.actor),
                None => None,
            };
            let config = SessionConfig { use_constraints: !no_ci, ..SessionConfig::default() };
            let mut session = Session::new(format!("session-{port}"), config, policy);
            let mut driver;
            if let Some(path) = &scenario {
                let dir = path.parent().map(PathBuf::from).unwrap_or_else(|| PathBuf::from("."));
                session.scenario_dir = dir;
                let name = path.file_name().context("scenario path has no file name")?.to_string_lossy().into_owned();
                driver = Driver::new(session, checkpoint.clone(), record.is_some());
                let out = driver.handle(&Envelope::new(None, Inbound::LoadScenario { scenario: ScenarioSource::Path { path: name } }));
                if let Some(Outbound::Error { message, .. }) =
                    out.iter().find(|m| matches!(m, Outbound::Error { .. }))
                {
                    bail!("cannot load scenario: {message}");
                }
            } else {
                driver = Driver::new(session, checkpoint.clone(), record.is_some());
            }
            let language = match HttpTransport::from_env(Duration::from_secs(20)) {
                Ok(t) => Some(Arc::new(LlmBackend::new(Box::new(t)))),
                Err(_) => None,
            };
            let bind: SocketAddr = format!("{host}:{port}").parse().context("bad host/port")?;
            let handle = sketchnav_core::service::spawn(driver, ServeOptions { bind, realtime, record, language })?;
            println!("serving session on {}", handle.addr);
            handle.wait();
        }
        Cmd::Replay { log } => {
            let events = EventLog::load(&log)?;
            let report = replay(&events)?;
            println!("replayed {} frames (recorded {})", report.frames.len(), report.recorded);
            if !report.identical() {
                bail!("frames diverge at index {:?}", report.first_mismatch);
            }
            println!("all frames bit-identical");
        }
        Cmd::Report { input, out, plots } => {
            let mut all = Metrics::default();
            for p in &input {
                let m: Metrics = read_json(p)?;
                all.episodes.extend(m.episodes);
            }
            write_report(&all, &out, plots)?;
            for method in all.methods() {
                print_rates(method.label(), &all.for_method(method))?;
            }
        }
        Cmd::Parse { map, pedestrians, llm, text } => {
            let map = SemanticMap::load(&map)?;
            let result = if llm {
                let backend = LlmBackend::new(Box::new(HttpTransport::from_env(Duration::from_secs(20))?));
                backend.request(&text, &map, &pedestrians)?
            } else {
                parse_instruction(&text, &map, &pedestrians)
            };
            println!("{}", serde_json::to_string_pretty(&result)?);
        }
        Cmd::Schema => print!("{PROTOCOL_SCHEMA}"),
    }
    Ok(())
}
