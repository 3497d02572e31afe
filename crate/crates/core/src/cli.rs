//! The `design`, `run` and `verify` commands and the files they emit.
//!
//! A scenario argument is a path to a TOML file or `builtin:<name>` for a
//! bundled scenario. `run` writes into its output directory:
//!
//! | file | contents |
//! |------|----------|
//! | `trajectory.csv` | `t` then the columns of [`crate::sim::trace_columns`], every `output_stride`-th sample plus the last |
//! | `events.csv` | `agent,family,k,t,dt`; `dt` is empty for an agent's first event of a family |
//! | `metrics.txt` | `key = value` summary |
//! | `design.txt` | design report, as printed by `design` |
//! | `scenario.toml` | the scenario text as given |
//! | `overrides.toml` | effective horizon, step and design mode |
//! | `plots/*.csv` | two-column series: `v{i}_{k}`, `y{i}`, `y_inf`, `sync_error`, `intervals_{family}_{i}` |
//!
//! Numbers are written with 17 significant digits.
//!
//! Exit codes: 0 success, 2 usage, 3 parse, 4 validation, 5 numerics,
//! 6 runtime or I/O, 7 verification failed.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use thiserror::Error;

use crate::config::{bundled, parse_config, ConfigError, LoadedConfig, Overrides};
use crate::graph::GraphSpectra;
use crate::sim::{run_scenario, EventLog, EventRecord, Family, Metrics, SimError, SimOutput, SimTrace};
use crate::verify::{verify, VerifyReport};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_PARSE: i32 = 3;
pub const EXIT_VALIDATION: i32 = 4;
pub const EXIT_NUMERICS: i32 = 5;
pub const EXIT_RUNTIME: i32 = 6;
pub const EXIT_VERIFY: i32 = 7;

/// Files written by `run`, besides the `plots/` directory.
pub const RUN_FILES: &[&str] = &[
    "trajectory.csv",
    "events.csv",
    "metrics.txt",
    "design.txt",
    "scenario.toml",
    "overrides.toml",
];

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("simulation failed: {0}")]
    Sim(#[from] SimError),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("{0}")]
    Usage(String),
    #[error("design hypotheses violated")]
    DesignRejected,
    #[error("verification failed")]
    VerificationFailed,
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(ConfigError::Parse { .. }) => EXIT_PARSE,
            CliError::Config(ConfigError::Validation { .. }) | CliError::DesignRejected => EXIT_VALIDATION,
            CliError::Config(ConfigError::Numerics { .. }) => EXIT_NUMERICS,
            CliError::Sim(SimError::Invalid(_)) => EXIT_VALIDATION,
            CliError::Sim(_) | CliError::Io { .. } => EXIT_RUNTIME,
            CliError::Usage(_) => EXIT_USAGE,
            CliError::VerificationFailed => EXIT_VERIFY,
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Full-precision decimal.
pub fn fmt_num(x: f64) -> String {
    format!("{x:.16e}")
}

/// Read a scenario argument: a file path or `builtin:<name>`.
pub fn read_scenario_text(arg: &str) -> Result<String, CliError> {
    if let Some(name) = arg.strip_prefix("builtin:") {
        return bundled(name)
            .map(str::to_string)
            .ok_or_else(|| CliError::Usage(format!("no bundled scenario `{name}`")));
    }
    fs::read_to_string(arg).map_err(|e| io_err(Path::new(arg), e))
}

fn fmt_matrix(m: &crate::numerics::Matrix) -> String {
    let rows: Vec<String> = m
        .row_iter()
        .map(|r| format!("[{}]", r.iter().map(|x| fmt_num(*x)).collect::<Vec<_>>().join(", ")))
        .collect();
    format!("[{}]", rows.join(", "))
}

fn fmt_list(v: impl IntoIterator<Item = f64>) -> String {
    format!("[{}]", v.into_iter().map(fmt_num).collect::<Vec<_>>().join(", "))
}

/// Design constants with a pass/fail flag per design hypothesis.
#[derive(Debug, Clone)]
pub struct DesignReport {
    pub text: String,
    /// All hypotheses hold, or the design was requested in unchecked mode.
    pub accepted: bool,
}

fn design_report_text(cfg: &LoadedConfig, requested_unchecked: bool) -> (String, bool) {
    let d = &cfg.scenario.design;
    let s: &GraphSpectra = &cfg.scenario.spectra;
    let n = cfg.scenario.agent_count();
    let mut o = String::new();
    let flag = |ok: bool| if ok { "PASS" } else { "FAIL" };
    let _ = writeln!(o, "mode = {}", if requested_unchecked { "unchecked" } else { "checked" });
    let _ = writeln!(o, "agents = {n}");
    let _ = writeln!(o, "r = {}", fmt_list(s.r.iter().copied()));
    let _ = writeln!(o, "lambda2_hat = {}", fmt_num(s.lambda2_hat));
    let _ = writeln!(o, "lambda2_hat_over_n = {}", fmt_num(d.lambda_bound));
    let _ = writeln!(o, "lambda = {}", fmt_num(d.lambda));
    let _ = writeln!(o, "beta = {}", fmt_num(d.beta));
    let _ = writeln!(o, "beta_required = {}", fmt_num(d.beta_required));
    let _ = writeln!(o, "P = {}", fmt_matrix(&d.p));
    let _ = writeln!(o, "K = {}", fmt_matrix(&d.k));
    let _ = writeln!(o, "g = {}", fmt_list(d.g.iter().copied()));
    let _ = writeln!(o, "eta_i = {}", fmt_list(d.eta_i.iter().copied()));
    let _ = writeln!(o, "eta = {}", fmt_num(d.eta));
    let _ = writeln!(o, "phi = {}", fmt_num(d.phi));
    let _ = writeln!(o, "rho = {}", d.rho.map_or("undefined".into(), fmt_num));
    let _ = writeln!(o, "varphi = {}", d.varphi.map_or("undefined".into(), fmt_num));
    let _ = writeln!(o, "norm_A = {}", fmt_num(d.norm_a));
    let _ = writeln!(o, "norm_LG = {}", fmt_num(d.lambda_lg_norm));
    let _ = writeln!(o, "norm_BBtP = {}", fmt_num(d.norm_bbtp));
    let _ = writeln!(o, "b1 = {}", fmt_num(d.b1));
    let _ = writeln!(o, "b2 = {}", fmt_num(d.b2));
    let _ = writeln!(o, "b = {}", fmt_num(d.b));
    let c = &d.checks;
    let _ = writeln!(
        o,
        "check.lambda_in_range = {}  (0 < lambda = {} < lambda2_hat/N = {})",
        flag(c.lambda_in_range),
        d.lambda,
        d.lambda_bound
    );
    let _ = writeln!(
        o,
        "check.beta_matches = {}  (beta = {} vs 1/lambda_min(GR) = {})",
        flag(c.beta_matches),
        d.beta,
        d.beta_required
    );
    let _ = match (c.varphi_below_one, d.varphi) {
        (Some(ok), Some(v)) => writeln!(o, "check.varphi_below_one = {}  (varphi = {v} < 1)", flag(ok)),
        _ => writeln!(o, "check.varphi_below_one = N/A  (rho undefined because lambda >= lambda2_hat/N)"),
    };
    let gains = (0..n)
        .map(|i| format!("g_{i} = {} >= r_{i} = {}", d.g[i], s.r[i]))
        .collect::<Vec<_>>()
        .join(", ");
    let _ = writeln!(o, "check.gains_dominate_r = {}  ({gains})", flag(c.gains_dominate_r));
    let _ = writeln!(
        o,
        "check.step_resolves_timer = {}  (h = {} <= b/4 = {})",
        flag(cfg.scenario.step <= d.b / 4.0),
        cfg.scenario.step,
        d.b / 4.0
    );
    let all = c.all_pass();
    let accepted = requested_unchecked || all;
    let _ = writeln!(
        o,
        "design = {}",
        match (all, requested_unchecked) {
            (true, _) => "all hypotheses hold",
            (false, true) => "hypotheses violated (accepted in unchecked mode)",
            (false, false) => "REJECTED",
        }
    );
    (o, accepted)
}

/// Design report for a scenario. In checked mode a violated hypothesis is
/// reported with both sides evaluated and `accepted` is false.
pub fn cmd_design(text: &str, overrides: &Overrides) -> Result<DesignReport, CliError> {
    match parse_config(text, overrides) {
        Ok(cfg) => {
            let (text, accepted) = design_report_text(&cfg, cfg.inputs.unchecked);
            Ok(DesignReport { text, accepted })
        }
        Err(ConfigError::Validation { field, message }) if field == "consensus" => {
            let relaxed = Overrides {
                unchecked: true,
                ..overrides.clone()
            };
            let cfg = parse_config(text, &relaxed).map_err(|_| ConfigError::Validation {
                field: field.clone(),
                message: message.clone(),
            })?;
            let (body, accepted) = design_report_text(&cfg, false);
            Ok(DesignReport {
                text: format!("error = {message}\n{body}"),
                accepted,
            })
        }
        Err(e) => Err(e.into()),
    }
}

/// Render a metrics summary as `key = value` lines.
pub fn render_metrics(m: &Metrics, name: &str) -> String {
    let mut o = String::new();
    let _ = writeln!(o, "scenario = {name}");
    let _ = writeln!(o, "samples = {}", m.samples);
    let _ = writeln!(o, "initial_p_norm = {}", fmt_num(m.initial_p_norm));
    let _ = writeln!(o, "final_p_norm = {}", fmt_num(m.final_p_norm));
    let _ = writeln!(o, "final_sync_error = {}", fmt_num(m.final_sync_error));
    let _ = writeln!(o, "v_increase_count = {}", m.v_increase_count);
    for (i, a) in m.agents.iter().enumerate() {
        for (fam, s) in [("consensus", &a.consensus), ("regulation", &a.regulation)] {
            let opt = |x: Option<f64>| x.map_or("none".into(), fmt_num);
            let _ = writeln!(o, "agent{i}.{fam}.count = {}", s.count);
            let _ = writeln!(o, "agent{i}.{fam}.min_interval = {}", opt(s.min_interval));
            let _ = writeln!(o, "agent{i}.{fam}.mean_interval = {}", opt(s.mean_interval));
            let _ = writeln!(o, "agent{i}.{fam}.max_per_unit_time = {}", s.max_per_unit_time);
        }
    }
    o
}

fn kept_rows(trace: &SimTrace, stride: usize) -> impl Iterator<Item = &Vec<f64>> {
    let last = trace.rows.len().saturating_sub(1);
    trace
        .rows
        .iter()
        .enumerate()
        .filter(move |(k, _)| k % stride == 0 || *k == last)
        .map(|(_, r)| r)
}

/// Trajectory CSV text.
pub fn trajectory_csv(trace: &SimTrace, stride: usize) -> String {
    let mut o = trace.columns.join(",");
    o.push('\n');
    for r in kept_rows(trace, stride) {
        o.push_str(&r.iter().map(|x| fmt_num(*x)).collect::<Vec<_>>().join(","));
        o.push('\n');
    }
    o
}

/// Event-log CSV text.
pub fn events_csv(log: &EventLog) -> String {
    let mut o = String::from("agent,family,k,t,dt\n");
    for r in &log.records {
        let _ = writeln!(
            o,
            "{},{},{},{},{}",
            r.agent,
            r.family,
            r.k,
            fmt_num(r.t),
            r.dt.map(fmt_num).unwrap_or_default()
        );
    }
    o
}

fn two_column(name: &str, data: impl Iterator<Item = (f64, f64)>) -> String {
    let mut o = format!("t,{name}\n");
    for (t, x) in data {
        let _ = writeln!(o, "{},{}", fmt_num(t), fmt_num(x));
    }
    o
}

/// Two-column plot files keyed by file name.
pub fn plot_files(out: &SimOutput, stride: usize, n: usize, q: usize) -> Vec<(String, String)> {
    let trace = &out.trace;
    let mut files = Vec::new();
    let mut series = |col: String| {
        if let Some(c) = trace.col(&col) {
            let body = two_column(&col, kept_rows(trace, stride).map(|r| (r[0], r[c])));
            files.push((format!("{col}.csv"), body));
        }
    };
    for i in 0..n {
        for k in 0..q {
            series(format!("v{i}_{k}"));
        }
        series(format!("y{i}"));
    }
    series("y_inf".into());
    series("sync_error".into());
    for fam in [Family::Consensus, Family::Regulation] {
        for i in 0..n {
            let body = two_column(
                &format!("dt_{fam}_{i}"),
                out.log.of(i, fam).filter_map(|r| r.dt.map(|dt| (r.t, dt))),
            );
            files.push((format!("intervals_{fam}_{i}.csv"), body));
        }
    }
    files
}

fn write(path: &Path, body: &str) -> Result<(), CliError> {
    fs::write(path, body).map_err(|e| io_err(path, e))
}

/// Result of one `run`.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub metrics_text: String,
    pub output: SimOutput,
}

/// Run a scenario and write the documented file set into `out_dir`.
pub fn cmd_run(text: &str, overrides: &Overrides, out_dir: &Path) -> Result<RunSummary, CliError> {
    let cfg = parse_config(text, overrides)?;
    let sc = &cfg.scenario;
    let out = run_scenario(sc)?;
    fs::create_dir_all(out_dir.join("plots")).map_err(|e| io_err(out_dir, e))?;
    let stride = cfg.settings.output_stride;
    let metrics_text = render_metrics(&out.metrics, &sc.name);
    write(&out_dir.join("trajectory.csv"), &trajectory_csv(&out.trace, stride))?;
    write(&out_dir.join("events.csv"), &events_csv(&out.log))?;
    write(&out_dir.join("metrics.txt"), &metrics_text)?;
    write(&out_dir.join("design.txt"), &design_report_text(&cfg, cfg.inputs.unchecked).0)?;
    write(&out_dir.join("scenario.toml"), text)?;
    write(
        &out_dir.join("overrides.toml"),
        &format!(
            "horizon = {}\nstep = {}\nunchecked = {}\n",
            fmt_num(sc.horizon),
            fmt_num(sc.step),
            cfg.inputs.unchecked
        ),
    )?;
    for (name, body) in plot_files(&out, stride, sc.agent_count(), sc.model.state_dim()) {
        write(&out_dir.join("plots").join(name), &body)?;
    }
    Ok(RunSummary {
        out_dir: out_dir.to_path_buf(),
        metrics_text,
        output: out,
    })
}

/// Parse a trajectory CSV back into a trace.
pub fn read_trajectory_csv(text: &str) -> Result<SimTrace, String> {
    let mut lines = text.lines();
    let header = lines.next().ok_or("empty trajectory file")?;
    let columns: Vec<String> = header.split(',').map(str::to_string).collect();
    let mut rows = Vec::new();
    for (k, line) in lines.enumerate() {
        let row = line
            .split(',')
            .map(|x| x.parse::<f64>().map_err(|e| format!("line {}: {e}", k + 2)))
            .collect::<Result<Vec<_>, _>>()?;
        if row.len() != columns.len() {
            return Err(format!("line {}: {} fields, header has {}", k + 2, row.len(), columns.len()));
        }
        rows.push(row);
    }
    Ok(SimTrace { columns, rows })
}

/// Parse an event-log CSV.
pub fn read_events_csv(text: &str) -> Result<EventLog, String> {
    let mut lines = text.lines();
    if lines.next() != Some("agent,family,k,t,dt") {
        return Err("events file: unexpected header".into());
    }
    let mut records = Vec::new();
    for (k, line) in lines.enumerate() {
        let err = |e: String| format!("events line {}: {e}", k + 2);
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(err(format!("expected 5 fields, got {}", f.len())));
        }
        records.push(EventRecord {
            agent: f[0].parse().map_err(|e| err(format!("{e}")))?,
            family: f[1].parse().map_err(err)?,
            k: f[2].parse().map_err(|e| err(format!("{e}")))?,
            t: f[3].parse().map_err(|e| err(format!("{e}")))?,
            dt: if f[4].is_empty() {
                None
            } else {
                Some(f[4].parse().map_err(|e| err(format!("{e}")))?)
            },
        });
    }
    Ok(EventLog { records })
}

/// Verify a scenario (running it in memory) or a `run` output directory.
pub fn cmd_verify(target: &str, overrides: &Overrides) -> Result<VerifyReport, CliError> {
    let dir = Path::new(target);
    if !target.starts_with("builtin:") && dir.is_dir() {
        let read = |name: &str| {
            let p = dir.join(name);
            fs::read_to_string(&p).map_err(|e| io_err(&p, e))
        };
        let text = read("scenario.toml")?;
        let saved: toml::Table = read("overrides.toml")?
            .parse()
            .map_err(|e| io_err(&dir.join("overrides.toml"), e))?;
        let num = |k: &str| saved.get(k).and_then(|v| v.as_float());
        let effective = Overrides {
            horizon: overrides.horizon.or(num("horizon")),
            step: overrides.step.or(num("step")),
            unchecked: overrides.unchecked || saved.get("unchecked").and_then(|v| v.as_bool()).unwrap_or(false),
        };
        let cfg = parse_config(&text, &effective)?;
        let trace = read_trajectory_csv(&read("trajectory.csv")?).map_err(|e| io_err(&dir.join("trajectory.csv"), e))?;
        let log = read_events_csv(&read("events.csv")?).map_err(|e| io_err(&dir.join("events.csv"), e))?;
        return verify(&cfg.scenario, &trace, &log).map_err(|e| io_err(dir, e));
    }
    let text = read_scenario_text(target)?;
    let cfg = parse_config(&text, overrides)?;
    let out = run_scenario(&cfg.scenario)?;
    verify(&cfg.scenario, &out.trace, &out.log).map_err(|e| io_err(Path::new(target), e))
}

#[derive(Debug, Parser)]
#[command(name = "etsync", version, about = "Event-triggered output synchronization: design, simulate, verify")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Override the simulation horizon.
    #[arg(long, global = true)]
    pub horizon: Option<f64>,
    /// Override the integration step.
    #[arg(long, global = true)]
    pub step: Option<f64>,
    /// Accept consensus constants that violate the design hypotheses.
    #[arg(long, global = true)]
    pub unchecked: bool,
    /// Number of scenarios run concurrently.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the design constants and hypothesis checks.
    Design { config: String },
    /// Simulate and write trajectories, events, metrics and plot data.
    Run {
        /// One or more scenarios; with several, each writes to `<out>/<name>`.
        #[arg(required = true)]
        configs: Vec<String>,
        #[arg(short = 'o', long = "out")]
        out: PathBuf,
    },
    /// Check every trajectory invariant on a scenario or a run directory.
    Verify { target: String },
}

fn scenario_dir_name(arg: &str) -> String {
    arg.strip_prefix("builtin:").map(str::to_string).unwrap_or_else(|| {
        Path::new(arg)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "scenario".into())
    })
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let overrides = Overrides {
        horizon: cli.horizon,
        step: cli.step,
        unchecked: cli.unchecked,
    };
    match cli.command {
        Command::Design { config } => {
            let report = cmd_design(&read_scenario_text(&config)?, &overrides)?;
            print!("{}", report.text);
            if report.accepted {
                Ok(())
            } else {
                Err(CliError::DesignRejected)
            }
        }
        Command::Run { configs, out } => {
            let single = configs.len() == 1;
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(cli.jobs.max(1))
                .build()
                .map_err(|e| CliError::Usage(e.to_string()))?;
            let results: Vec<Result<RunSummary, CliError>> = pool.install(|| {
                configs
                    .par_iter()
                    .map(|c| {
                        let dir = if single { out.clone() } else { out.join(scenario_dir_name(c)) };
                        cmd_run(&read_scenario_text(c)?, &overrides, &dir)
                    })
                    .collect()
            });
            let mut first_err = None;
            for (c, r) in configs.iter().zip(results) {
                match r {
                    Ok(s) => {
                        println!("# {c} -> {}", s.out_dir.display());
                        print!("{}", s.metrics_text);
                    }
                    Err(e) => {
                        eprintln!("{c}: {e}");
                        first_err.get_or_insert(e);
                    }
                }
            }
            first_err.map_or(Ok(()), Err)
        }
        Command::Verify { target } => {
            let report = cmd_verify(&target, &overrides)?;
            print!("{}", report.render());
            if report.passed() {
                Ok(())
            } else {
                Err(CliError::VerificationFailed)
            }
        }
    }
}

/// Entry point for the binary; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
