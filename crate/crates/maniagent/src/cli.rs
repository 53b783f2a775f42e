//! Command line: `run`, `bench`, `collect`, `replay` and `cache-inspect`.
//!
//! Exit status is 0 when no internal error occurred (a failed task is data),
//! 1 on replay mismatches and other errors, 2 on configuration errors and 3
//! on backend transport errors.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use maniagent_core::harness::{
    BenchmarkSpec, FailureReason, PositionOutcome, ReplayReport, SinkError, TrajectoryRecord,
    TrajectorySink,
};
use maniagent_core::simworld::Region;

use crate::app::{format_bench_table, format_episode, format_stats, App};
use crate::cache::PersistentCache;
use crate::config::{CollectMode, RunConfig};
use crate::dataset::{list_trajectories, read_trajectory, JsonlSink};
use crate::error::{Error, Result};
use crate::files::write_json;

#[derive(Debug, Parser)]
#[command(
    name = "maniagent",
    version,
    about = "Agentic tabletop manipulation: run, benchmark and collect episodes"
)]
pub struct Cli {
    /// TOML configuration file; defaults apply when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Override a config key, e.g. `--set episode.loop_limit=3`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one episode and print its transcript.
    Run(RunArgs),
    /// Run scenarios repeatedly and print a success-rate table.
    Bench(BenchArgs),
    /// Collect a trajectory dataset with automatic resets.
    Collect(CollectArgs),
    /// Re-execute trajectory files and compare final states.
    Replay(ReplayArgs),
    /// List the entries of an action cache file.
    CacheInspect(CacheArgs),
}

#[derive(Debug, Args)]
pub struct BackendArg {
    /// Backend for every role: `scripted:oracle`, `scripted:<transcript>` or `live:<url>[#model]`.
    #[arg(long, value_name = "SPEC")]
    pub backend: Option<String>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long, value_name = "NAME|PATH")]
    pub scenario: Option<String>,
    /// Instruction text; defaults to the scenario's own.
    #[arg(long)]
    pub task: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub backend: BackendArg,
    /// Print the full episode record as JSON.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// `all` or a comma-separated list of scenarios.
    #[arg(long, value_name = "LIST")]
    pub scenario: Option<String>,
    #[arg(long)]
    pub episodes: Option<u32>,
    #[arg(long)]
    pub repeats: Option<u32>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub backend: BackendArg,
    /// Also write the report as JSON to this file.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Print JSON instead of the table.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Grid,
    Random,
}

#[derive(Debug, Args)]
pub struct CollectArgs {
    #[arg(long, value_name = "NAME|PATH")]
    pub scenario: Option<String>,
    /// Number of valid trajectories wanted.
    #[arg(long)]
    pub target: Option<u32>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Grid corner `x,y`.
    #[arg(long, value_name = "X,Y", value_parser = parse_xy)]
    pub min: Option<[f64; 2]>,
    #[arg(long, value_name = "X,Y", value_parser = parse_xy)]
    pub max: Option<[f64; 2]>,
    /// Executions per reset position before it is skipped.
    #[arg(long)]
    pub attempts: Option<u32>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Box the arm cannot enter, `x0,y0,z0,x1,y1,z1`. Repeatable.
    #[arg(long, value_name = "BOX", value_parser = parse_region)]
    pub unreachable: Vec<Region>,
    #[command(flatten)]
    pub backend: BackendArg,
    /// Output directory for trajectory files and the run summary.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// Trajectory files or directories holding them.
    #[arg(required = true)]
    pub paths: Vec<PathBuf>,
    /// Allowed position and angle error.
    #[arg(long, default_value_t = 1e-9)]
    pub tolerance: f64,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct CacheArgs {
    /// Cache file; defaults to `run.cache_path`.
    #[arg(long, value_name = "PATH")]
    pub cache: Option<PathBuf>,
    #[arg(long)]
    pub json: bool,
}

fn parse_floats<const N: usize>(s: &str) -> std::result::Result<[f64; N], String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("`{p}`: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    parts
        .try_into()
        .map_err(|v: Vec<f64>| format!("expected {N} comma-separated numbers, got {}", v.len()))
}

fn parse_xy(s: &str) -> std::result::Result<[f64; 2], String> {
    parse_floats::<2>(s)
}

fn parse_region(s: &str) -> std::result::Result<Region, String> {
    let v = parse_floats::<6>(s)?;
    Ok(Region {
        min: [v[0], v[1], v[2]],
        max: [v[3], v[4], v[5]],
    })
}

/// `section.key=value` into the equivalent environment override.
fn set_to_env(set: &str) -> Result<(String, String)> {
    let (key, value) = set
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("--set `{set}` is not KEY=VALUE")))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(Error::Config(format!("--set `{set}` has a malformed key")));
    }
    Ok((
        format!("MANIAGENT_{}", key.replace('.', "__").to_ascii_uppercase()),
        value.to_string(),
    ))
}

/// Config file, then environment, then `--set` flags, then per-command flags.
fn load_config(cli: &Cli, env: &[(String, String)]) -> Result<RunConfig> {
    let sets = cli
        .sets
        .iter()
        .map(|s| set_to_env(s))
        .collect::<Result<Vec<_>>>()?;
    RunConfig::load_layers(cli.config.as_deref(), env.iter().cloned(), sets)
}

fn apply_backend(cfg: &mut RunConfig, arg: &BackendArg) {
    if let Some(spec) = &arg.backend {
        cfg.backends.set_all(spec);
    }
}

fn checked(cfg: RunConfig) -> Result<RunConfig> {
    cfg.validate()?;
    Ok(cfg)
}

/// Parses `args` and runs the command; returns the exit status.
pub fn run<I, T>(args: I, env: &[(String, String)], out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 {
                write!(out, "{text}")
            } else {
                write!(err, "{text}")
            };
            return code;
        }
    };
    match dispatch(&cli, env, out, err) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(
    cli: &Cli,
    env: &[(String, String)],
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<i32> {
    let write_err = |e: std::io::Error| Error::io("<stdout>", e);
    match &cli.command {
        Command::Run(a) => {
            let mut cfg = load_config(cli, env)?;
            apply_backend(&mut cfg, &a.backend);
            if let Some(s) = &a.scenario {
                cfg.run.scenario = s.clone();
            }
            if let Some(seed) = a.seed {
                cfg.run.seed = seed;
            }
            let app = App::new(checked(cfg)?)?;
            let scenario = app.resolve_scenario(&app.config.run.scenario)?;
            let mut cache = app.open_cache()?;
            let result = app.run_episode(
                &scenario,
                a.task.as_deref(),
                app.config.run.seed,
                &mut cache,
            )?;
            if a.json {
                let text = serde_json::to_string_pretty(&result)
                    .map_err(|e| Error::parse("<episode>", e))?;
                writeln!(out, "{text}").map_err(write_err)?;
            } else {
                write!(out, "{}", format_episode(&result)).map_err(write_err)?;
            }
            if result.failure == Some(FailureReason::Transport) {
                return Err(Error::Transport(result.failure_detail.unwrap_or_default()));
            }
            Ok(0)
        }
        Command::Bench(a) => {
            let mut cfg = load_config(cli, env)?;
            apply_backend(&mut cfg, &a.backend);
            if let Some(s) = &a.scenario {
                cfg.bench.scenarios = vec![s.clone()];
            }
            if let Some(n) = a.episodes {
                cfg.bench.episodes = n;
            }
            if let Some(n) = a.repeats {
                cfg.bench.repeats = n;
            }
            if let Some(n) = a.seed {
                cfg.bench.base_seed = n;
            }
            let app = App::new(checked(cfg)?)?;
            let scenarios = app.resolve_scenarios(&app.config.bench.scenarios)?;
            let spec = BenchmarkSpec {
                episodes_per_task: app.config.bench.episodes,
                repeats: app.config.bench.repeats,
                base_seed: app.config.bench.base_seed,
            };
            let report = app.bench(&scenarios, &spec);
            if a.json {
                let text = serde_json::to_string_pretty(&report)
                    .map_err(|e| Error::parse("<report>", e))?;
                writeln!(out, "{text}").map_err(write_err)?;
            } else {
                write!(out, "{}", format_bench_table(&report)).map_err(write_err)?;
            }
            if let Some(path) = &a.out {
                write_json(path, &report)?;
            }
            if let Some(n) = report.failures.get(&FailureReason::Transport) {
                return Err(Error::Transport(format!(
                    "{n} episode(s) lost to transport errors"
                )));
            }
            Ok(0)
        }
        Command::Collect(a) => {
            let mut cfg = load_config(cli, env)?;
            apply_backend(&mut cfg, &a.backend);
            if let Some(s) = &a.scenario {
                cfg.run.scenario = s.clone();
            }
            let c = &mut cfg.collect;
            if let Some(n) = a.target {
                c.target = n;
            }
            if let Some(m) = a.mode {
                c.mode = match m {
                    ModeArg::Grid => CollectMode::Grid,
                    ModeArg::Random => CollectMode::Random,
                };
            }
            c.min = a.min.or(c.min);
            c.max = a.max.or(c.max);
            if let Some(n) = a.attempts {
                c.attempts = n;
            }
            if let Some(n) = a.seed {
                c.base_seed = n;
            }
            if let Some(dir) = &a.out {
                c.out_dir = dir.clone();
            }
            cfg.sim.unreachable.extend(a.unreachable.iter().copied());
            let app = App::new(checked(cfg)?)?;
            let scenario = app.resolve_scenario(&app.config.run.scenario)?;
            let spec = app.collect_spec(&scenario)?;
            let dir = app.config.collect.out_dir.clone();
            let mut sink = ReportingSink {
                inner: JsonlSink::new(&dir)?,
                out: &mut *out,
            };
            let mut cache = app.open_cache()?;
            let outcome = app.collect(&scenario, &spec, &mut cache, &mut sink)?;
            for p in &outcome.positions {
                if p.outcome != PositionOutcome::Valid {
                    writeln!(
                        out,
                        "position {} {:?} after {} attempt(s): {}",
                        p.index,
                        p.outcome,
                        p.attempts,
                        p.detail.as_deref().unwrap_or("")
                    )
                    .map_err(write_err)?;
                }
            }
            match &outcome.stats {
                Some(stats) => write!(out, "{}", format_stats(stats)).map_err(write_err)?,
                None => writeln!(out, "no episodes were run").map_err(write_err)?,
            }
            write_json(&dir.join("summary.json"), &outcome)?;
            let transport = outcome
                .positions
                .iter()
                .filter(|p| p.reason == Some(FailureReason::Transport))
                .count();
            if transport > 0 && outcome.stats.as_ref().is_some_and(|s| s.valid == 0) {
                return Err(Error::Transport(format!(
                    "{transport} position(s) failed on transport errors"
                )));
            }
            Ok(0)
        }
        Command::Replay(a) => {
            let mut files = Vec::new();
            for p in &a.paths {
                if p.is_dir() {
                    files.extend(list_trajectories(p)?);
                } else {
                    files.push(p.clone());
                }
            }
            let mut reports = Vec::new();
            for f in &files {
                let report = match read_trajectory(f) {
                    Ok(record) => ReplayReport::check(&record, a.tolerance),
                    Err(e) => ReplayReport {
                        episode_id: f.display().to_string(),
                        matches: false,
                        diffs: vec![e.to_string()],
                    },
                };
                reports.push(report);
            }
            if a.json {
                let text = serde_json::to_string_pretty(&reports)
                    .map_err(|e| Error::parse("<replay>", e))?;
                writeln!(out, "{text}").map_err(write_err)?;
            } else {
                for r in &reports {
                    writeln!(
                        out,
                        "{} {}",
                        if r.matches { "ok      " } else { "MISMATCH" },
                        r.episode_id
                    )
                    .map_err(write_err)?;
                    for d in &r.diffs {
                        writeln!(out, "    {d}").map_err(write_err)?;
                    }
                }
            }
            let bad = reports.iter().filter(|r| !r.matches).count();
            if bad > 0 {
                writeln!(
                    err,
                    "{bad} of {} trajectory file(s) did not replay",
                    reports.len()
                )
                .map_err(write_err)?;
                return Ok(1);
            }
            Ok(0)
        }
        Command::CacheInspect(a) => {
            let path = match &a.cache {
                Some(p) => p.clone(),
                None => load_config(cli, env)?.run.cache_path.ok_or_else(|| {
                    Error::Config("no cache file given (--cache or run.cache_path)".into())
                })?,
            };
            if !path.is_file() {
                return Err(Error::Config(format!(
                    "cache file {} not found",
                    path.display()
                )));
            }
            let cache = PersistentCache::open(&path)?;
            let records = cache.records();
            if a.json {
                let text =
                    serde_json::to_string_pretty(&records).map_err(|e| Error::parse(&path, e))?;
                writeln!(out, "{text}").map_err(write_err)?;
            } else {
                writeln!(
                    out,
                    "{} entr{} in {}",
                    records.len(),
                    if records.len() == 1 { "y" } else { "ies" },
                    path.display()
                )
                .map_err(write_err)?;
                for r in &records {
                    let skill = serde_json::to_value(r.skill_name)
                        .ok()
                        .and_then(|v| v.as_str().map(str::to_string))
                        .unwrap_or_default();
                    writeln!(
                        out,
                        "  {skill:<10} {:>2} steps  {}",
                        r.steps.len(),
                        r.prompt
                    )
                    .map_err(write_err)?;
                }
            }
            Ok(0)
        }
    }
}

/// Prints a line for every trajectory as it is written.
struct ReportingSink<'a> {
    inner: JsonlSink,
    out: &'a mut dyn Write,
}

impl TrajectorySink for ReportingSink<'_> {
    fn write(&mut self, record: &TrajectoryRecord) -> std::result::Result<(), SinkError> {
        self.inner.write(record)?;
        let _ = writeln!(
            self.out,
            "wrote {} ({} steps)",
            record.episode_id,
            record.steps.len()
        );
        Ok(())
    }
}
