use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use meshprobe_core::fit::{fit_stochastic, FitOptions, SessionTarget, StochasticFit};
use meshprobe_core::live::{self, LiveError};
use meshprobe_core::radio::{calibrate, CalibrationError};
use meshprobe_core::sim::{run_session, SimError};
use meshprobe_core::{summarize, FormationReport, ProtocolParams, Scenario, SessionRecord};

mod render;

const SCENARIO_DIR_VAR: &str = "MESHPROBE_SCENARIO_DIR";

#[derive(Parser)]
#[command(name = "meshprobe", version, about = "Mesh-network probe measurements: simulate, budget, diagnose, report")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
    Table,
}

#[derive(Args)]
struct Output {
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Write to this file instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run a seeded probe session over a scenario's selected route.
    Simulate {
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        requests: u32,
        #[arg(long)]
        seed: u64,
        #[command(flatten)]
        output: Output,
    },
    /// Deterministic delay budget for a scenario's routers.
    Budget {
        #[arg(long)]
        scenario: String,
        #[command(flatten)]
        output: Output,
    },
    /// Link qualities, selected route, formation verdict and coverage.
    Topology {
        #[arg(long)]
        scenario: String,
        #[command(flatten)]
        output: Output,
    },
    /// Statistics of a recorded session (JSON or CSV).
    Report {
        #[arg(long)]
        session: PathBuf,
        #[command(flatten)]
        output: Output,
    },
    /// Fit radio (and optionally stochastic) parameters to measured targets.
    Calibrate {
        #[arg(long)]
        targets: PathBuf,
        #[command(flatten)]
        output: Output,
    },
    /// Probe protocol over TCP.
    Live {
        #[command(subcommand)]
        role: LiveRole,
    },
}

#[derive(Subcommand)]
enum LiveRole {
    /// Answer start bytes with pose strings.
    Device {
        #[arg(long)]
        listen: String,
        /// Exit after serving this many clients.
        #[arg(long)]
        sessions: Option<u64>,
        #[command(flatten)]
        output: Output,
    },
    /// Issue sequential probes against a device.
    Client {
        #[arg(long)]
        connect: String,
        #[arg(long)]
        requests: u32,
        #[command(flatten)]
        output: Output,
    },
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Scenario(String),
    Formation(Box<FormationReport>),
    Io(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Scenario(_) => 2,
            CliError::Formation(_) => 3,
            CliError::Io(_) => 4,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Scenario(_) => "scenario",
            CliError::Formation(_) => "formation",
            CliError::Io(_) => "io",
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Scenario(m) | CliError::Io(m) => f.write_str(m),
            CliError::Formation(r) => write!(
                f,
                "topology is {} (no usable route from the device-side router to the gateway)",
                render::verdict(r.verdict)
            ),
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::NotFormed(r) => CliError::Formation(r),
            SimError::NoRequests => CliError::Usage(e.to_string()),
        }
    }
}

impl From<LiveError> for CliError {
    fn from(e: LiveError) -> Self {
        CliError::Io(e.to_string())
    }
}

type Result<T> = std::result::Result<T, CliError>;

/// A path as given if it exists or contains a separator; otherwise a name
/// looked up in the scenario directory, `.json` appended when missing.
fn resolve_scenario(arg: &str) -> PathBuf {
    let given = PathBuf::from(arg);
    if given.exists() || arg.contains('/') || arg.contains(std::path::MAIN_SEPARATOR) {
        return given;
    }
    let dir = std::env::var_os(SCENARIO_DIR_VAR).map_or_else(|| PathBuf::from("scenarios"), PathBuf::from);
    let name = if arg.ends_with(".json") {
        arg.to_string()
    } else {
        format!("{arg}.json")
    };
    dir.join(name)
}

fn load_scenario(arg: &str) -> Result<Scenario> {
    let path = resolve_scenario(arg);
    Scenario::load(&path).map_err(|e| match e {
        meshprobe_core::ScenarioError::Io { .. } => CliError::Io(e.to_string()),
        other => CliError::Scenario(format!("{}: {other}", path.display())),
    })
}

fn emit(output: &Output, text: &str) -> Result<()> {
    match &output.out {
        Some(path) => fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display()))),
        None => {
            let mut out = io::stdout().lock();
            out.write_all(text.as_bytes())?;
            out.flush()?;
            Ok(())
        }
    }
}

fn json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("reports always serialize");
    s.push('\n');
    s
}

fn no_csv(cmd: &str) -> CliError {
    CliError::Usage(format!("`{cmd}` has no CSV form; use --format json or table"))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TargetsFile {
    targets: Vec<TargetEntry>,
    #[serde(default)]
    fit: Option<FitOptions>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TargetEntry {
    /// Scenario file, relative to the targets file.
    scenario: String,
    attenuation: f64,
    snr: f64,
    #[serde(default)]
    session: Option<SessionTarget>,
}

#[derive(Serialize)]
struct SessionFitReport {
    scenario: String,
    target: SessionTarget,
    fit: StochasticFit,
}

#[derive(Serialize)]
struct CalibrateReport {
    radio: meshprobe_core::Calibration,
    sessions: Vec<SessionFitReport>,
}

fn cmd_calibrate(targets: &Path) -> Result<CalibrateReport> {
    let text = fs::read_to_string(targets).map_err(|e| CliError::Io(format!("{}: {e}", targets.display())))?;
    let file: TargetsFile = serde_json::from_str(&text)
        .map_err(|e| CliError::Scenario(format!("{}: {e}", targets.display())))?;
    let base_dir = targets.parent().unwrap_or(Path::new("."));
    let mut scenarios = Vec::new();
    for t in &file.targets {
        let path = base_dir.join(&t.scenario);
        scenarios.push(load_scenario(&path.to_string_lossy())?);
    }
    let Some(first) = scenarios.first() else {
        return Err(CliError::Scenario(format!("{}: no targets", targets.display())));
    };
    let cal_targets: Vec<_> = file
        .targets
        .iter()
        .zip(&scenarios)
        .map(|(t, s)| s.calibration_target(t.attenuation, t.snr))
        .collect();
    let radio = calibrate(&cal_targets, &first.radio).map_err(|e| match e {
        CalibrationError::Infeasible { ref residuals, .. } => {
            let detail: Vec<String> = residuals
                .iter()
                .map(|r| format!("{} att {:+.2} dB snr {:+.2} dB", r.label, r.attenuation_residual(), r.snr_residual()))
                .collect();
            CliError::Scenario(format!("{e} [{}]", detail.join("; ")))
        }
        other => CliError::Scenario(other.to_string()),
    })?;

    let opts = file.fit.unwrap_or_default();
    let mut sessions = Vec::new();
    for (t, s) in file.targets.iter().zip(&scenarios) {
        let Some(target) = t.session else { continue };
        let mut fitted = s.clone();
        fitted.radio = radio.params;
        let fit = fit_stochastic(&fitted, target, &opts).map_err(|e| match e {
            meshprobe_core::fit::FitError::Sim(sim) => CliError::from(sim),
            other => CliError::Scenario(format!("{}: {other}", s.name)),
        })?;
        sessions.push(SessionFitReport {
            scenario: s.name.clone(),
            target,
            fit,
        });
    }
    Ok(CalibrateReport { radio, sessions })
}

fn read_session(path: &Path) -> Result<SessionRecord> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let bad = |e: meshprobe_core::session::RecordError| CliError::Scenario(format!("{}: {e}", path.display()));
    if text.trim_start().starts_with('{') {
        SessionRecord::from_json(&text).map_err(bad)
    } else {
        let label = path.file_stem().map_or_else(|| "session".into(), |s| s.to_string_lossy().into_owned());
        SessionRecord::read_csv(text.as_bytes(), &label, 0).map_err(bad)
    }
}

fn session_text(rec: &SessionRecord, format: Format) -> String {
    match format {
        Format::Json => rec.to_json(),
        Format::Csv => rec.to_csv(),
        Format::Table => render::session_table(rec),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate {
            scenario,
            requests,
            seed,
            output,
        } => {
            let s = load_scenario(&scenario)?;
            let rec = run_session(&s, requests, seed)?;
            emit(&output, &session_text(&rec, output.format.unwrap_or(Format::Json)))
        }
        Command::Budget { scenario, output } => {
            let s = load_scenario(&scenario)?;
            let b = s.budget();
            match output.format.unwrap_or(Format::Table) {
                Format::Json => emit(&output, &json(&render::BudgetReport { scenario: &s.name, budget: &b })),
                Format::Table => emit(&output, &render::budget_table(&s.name, &b)),
                Format::Csv => Err(no_csv("budget")),
            }
        }
        Command::Topology { scenario, output } => {
            let s = load_scenario(&scenario)?;
            let report = render::TopologyReport::new(&s);
            match output.format.unwrap_or(Format::Table) {
                Format::Json => emit(&output, &json(&report)),
                Format::Table => emit(&output, &render::topology_table(&report)),
                Format::Csv => Err(no_csv("topology")),
            }
        }
        Command::Report { session, output } => {
            let rec = read_session(&session)?;
            let stats = summarize(&rec).map_err(|e| CliError::Scenario(format!("{}: {e}", session.display())))?;
            match output.format.unwrap_or(Format::Table) {
                Format::Json => emit(&output, &json(&render::StatsReport { scenario: &rec.scenario, seed: rec.seed, stats: &stats })),
                Format::Table => emit(&output, &render::stats_table(&rec.scenario, &stats)),
                Format::Csv => emit(&output, &render::datasets_csv(&stats)),
            }
        }
        Command::Calibrate { targets, output } => {
            let report = cmd_calibrate(&targets)?;
            match output.format.unwrap_or(Format::Table) {
                Format::Json => emit(&output, &json(&report)),
                Format::Table => emit(&output, &render::calibration_table(&report.radio, &report.sessions)),
                Format::Csv => Err(no_csv("calibrate")),
            }
        }
        Command::Live { role } => match role {
            LiveRole::Device {
                listen,
                sessions,
                output,
            } => {
                let format = output.format.unwrap_or(Format::Table);
                if format == Format::Csv {
                    return Err(no_csv("live device"));
                }
                let listener = std::net::TcpListener::bind(&listen)
                    .map_err(|e| CliError::Io(format!("cannot listen on {listen}: {e}")))?;
                let local = listener.local_addr()?;
                eprintln!("meshprobe: listening on {local}");
                let stats = live::serve(&listener, ProtocolParams::default(), sessions)?;
                match format {
                    Format::Json => emit(&output, &json(&stats)),
                    _ => emit(
                        &output,
                        &format!(
                            "sessions {}\nbytes in {}\nframes out {}\n",
                            stats.sessions, stats.bytes_in, stats.frames_out
                        ),
                    ),
                }
            }
            LiveRole::Client {
                connect,
                requests,
                output,
            } => {
                if requests == 0 {
                    return Err(CliError::Usage("--requests must be at least 1".into()));
                }
                let (rec, _) = live::run_client(&connect, &ProtocolParams::default(), requests)?;
                emit(&output, &session_text(&rec, output.format.unwrap_or(Format::Json)))
            }
        },
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            eprintln!("meshprobe: error[usage]: {first}");
            for line in msg.lines().skip(1) {
                eprintln!("{line}");
            }
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("meshprobe: error[{}]: {e}", e.kind());
            if let CliError::Formation(report) = &e {
                eprint!("{}", render::formation_table(report));
            }
            ExitCode::from(e.code())
        }
    }
}
