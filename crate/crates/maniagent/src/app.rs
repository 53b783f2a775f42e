//! Wiring from a [`RunConfig`] to the core pipeline, plus text reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use maniagent_core::controller::{ActionCache, ActionStore};
use maniagent_core::gateway::{BackendKind, Gateway, ModelBackend};
use maniagent_core::harness::{
    collect_dataset, run_benchmark, run_episode, AgentSet, BenchmarkReport, BenchmarkSpec,
    CollectSpec, CollectionOutcome, DatasetStats, EpisodeConfig, EpisodeContext, EpisodeResult,
    FailureReason, ResetMode, TrajectorySink,
};
use maniagent_core::oracle::OracleBackend;
use maniagent_core::prompts::PromptLibrary;
use maniagent_core::simworld::{
    benchmark_scenarios, builtin_scenario, spawn_scene, Placement, Scenario,
};
use maniagent_core::{Clock, ManualClock};

use crate::cache::PersistentCache;
use crate::clock::WallClock;
use crate::config::{ClockKind, CollectMode, RunConfig, ROLES};
use crate::error::{Error, Result};
use crate::files::{load_calibration, load_prompts, load_scenario, load_transcript};
use crate::http::LiveChatBackend;

/// Backend behind one agent role.
#[derive(Clone)]
enum RoleBackend {
    /// Rule-based oracle, rebuilt for each scenario.
    Oracle,
    Fixed(Arc<dyn ModelBackend>),
}

/// Everything needed to run episodes from one configuration.
pub struct App {
    pub config: RunConfig,
    pub prompts: PromptLibrary,
    pub clock: Arc<dyn Clock>,
    roles: Vec<(RoleBackend, u32)>,
}

impl App {
    pub fn new(config: RunConfig) -> Result<Self> {
        let prompts = match &config.run.prompts_dir {
            Some(dir) => load_prompts(dir)?,
            None => PromptLibrary::builtin(),
        };
        let clock: Arc<dyn Clock> = match config.run.clock {
            ClockKind::Simulated => Arc::new(ManualClock::new()),
            ClockKind::Wall => Arc::new(WallClock::new()),
        };
        // Roles naming the same transcript or endpoint share one backend.
        let mut shared: BTreeMap<String, Arc<dyn ModelBackend>> = BTreeMap::new();
        let mut roles = Vec::new();
        for role in ROLES {
            let profile = config.backends.profile(role)?;
            let backend = if profile.is_oracle() {
                RoleBackend::Oracle
            } else {
                let spec = config.backends.spec(role).to_string();
                let backend = match shared.get(&spec) {
                    Some(b) => b.clone(),
                    None => {
                        let b: Arc<dyn ModelBackend> = match profile.kind {
                            BackendKind::Scripted => {
                                let path = profile.transcript.as_deref().unwrap_or_default();
                                Arc::new(load_transcript(Path::new(path)).map_err(config_error)?)
                            }
                            BackendKind::Live => Arc::new(LiveChatBackend::from_profile(&profile)?),
                        };
                        shared.insert(spec, b.clone());
                        b
                    }
                };
                RoleBackend::Fixed(backend)
            };
            roles.push((backend, profile.max_retries));
        }
        Ok(Self {
            config,
            prompts,
            clock,
            roles,
        })
    }

    pub fn episode_config(&self) -> EpisodeConfig {
        self.config.episode_config()
    }

    /// One gateway per role. Oracle roles share a backend built for `scenario`.
    pub fn agents_for(&self, scenario: &Scenario) -> AgentSet {
        let oracle: Arc<dyn ModelBackend> = Arc::new(
            OracleBackend::for_scenario(scenario)
                .with_approach_offset(self.config.controller.approach_offset),
        );
        let gateways: Vec<Arc<Gateway>> = self
            .roles
            .iter()
            .map(|(backend, retries)| {
                let b = match backend {
                    RoleBackend::Oracle => oracle.clone(),
                    RoleBackend::Fixed(b) => b.clone(),
                };
                Arc::new(Gateway::new(b, *retries).with_clock(self.clock.clone()))
            })
            .collect();
        AgentSet {
            scene: gateways[0].clone(),
            status: gateways[1].clone(),
            plan: gateways[2].clone(),
            keywords: gateways[3].clone(),
            disambiguate: gateways[4].clone(),
            action: gateways[5].clone(),
        }
    }

    /// Built-in name or scenario file, with the configured goal and camera overrides applied.
    pub fn resolve_scenario(&self, spec: &str) -> Result<Scenario> {
        let mut scenario = match builtin_scenario(spec) {
            Some(s) => s,
            None if Path::new(spec).is_file() => load_scenario(Path::new(spec))?,
            None => return Err(Error::Config(format!("unknown scenario `{spec}`"))),
        };
        self.apply_overrides(&mut scenario)?;
        Ok(scenario)
    }

    /// `all` selects the benchmark tasks; otherwise a comma-separated list.
    pub fn resolve_scenarios(&self, specs: &[String]) -> Result<Vec<Scenario>> {
        let mut out = Vec::new();
        for spec in specs
            .iter()
            .flat_map(|s| s.split(','))
            .map(str::trim)
            .filter(|s| !s.is_empty())
        {
            if spec == "all" {
                for mut s in benchmark_scenarios() {
                    self.apply_overrides(&mut s)?;
                    out.push(s);
                }
            } else {
                out.push(self.resolve_scenario(spec)?);
            }
        }
        if out.is_empty() {
            return Err(Error::Config("no scenario selected".into()));
        }
        Ok(out)
    }

    fn apply_overrides(&self, scenario: &mut Scenario) -> Result<()> {
        for goal in &mut scenario.goals {
            if let Some(t) = self.config.goal.threshold {
                goal.threshold = t;
            }
            if let Some(m) = self.config.goal.metric {
                goal.metric = m;
            }
        }
        if let Some(path) = &self.config.run.calibration {
            scenario.camera = load_calibration(path)?;
        }
        scenario.validate()?;
        Ok(())
    }

    /// The configured cache file, or an in-memory cache.
    pub fn open_cache(&self) -> Result<PersistentCache> {
        match &self.config.run.cache_path {
            Some(path) => PersistentCache::open(path),
            None => Ok(PersistentCache::in_memory()),
        }
    }

    /// One episode on a freshly spawned scene. `task` replaces the scenario instruction.
    pub fn run_episode(
        &self,
        scenario: &Scenario,
        task: Option<&str>,
        seed: u64,
        cache: &mut dyn ActionStore,
    ) -> Result<EpisodeResult> {
        let world = spawn_scene(scenario, seed)?;
        let agents = self.agents_for(scenario);
        let config = self.episode_config();
        let mut ctx = EpisodeContext {
            agents: &agents,
            prompts: &self.prompts,
            cache,
            clock: self.clock.as_ref(),
            config: &config,
        };
        let task = task.unwrap_or(&scenario.task).to_string();
        Ok(run_episode(&task, scenario, world, &mut ctx))
    }

    /// Benchmark with a fresh in-memory cache per repeat.
    pub fn bench(&self, scenarios: &[Scenario], spec: &BenchmarkSpec) -> BenchmarkReport {
        let config = self.episode_config();
        run_benchmark(
            scenarios,
            spec,
            &config,
            &self.prompts,
            self.clock.as_ref(),
            &mut |s| self.agents_for(s),
            &mut || Box::new(ActionCache::new()) as Box<dyn ActionStore>,
        )
    }

    /// Collection spec from the `[collect]` section.
    pub fn collect_spec(&self, scenario: &Scenario) -> Result<CollectSpec> {
        let c = &self.config.collect;
        let reset = match c.mode {
            CollectMode::Random => ResetMode::Random,
            CollectMode::Grid => {
                let (min, max) = match (c.min, c.max) {
                    (Some(min), Some(max)) => (min, max),
                    (None, None) => subject_region(scenario).ok_or_else(|| {
                        Error::Config(format!(
                            "scenario `{}` has no spawn region for its subject; set collect.min and collect.max",
                            scenario.name
                        ))
                    })?,
                    _ => return Err(Error::Config("collect.min and collect.max must be set together".into())),
                };
                ResetMode::Grid { min, max }
            }
        };
        Ok(CollectSpec {
            target_count: c.target,
            reset,
            attempts_per_position: c.attempts.max(1),
            base_seed: c.base_seed,
        })
    }

    pub fn collect(
        &self,
        scenario: &Scenario,
        spec: &CollectSpec,
        cache: &mut dyn ActionStore,
        sink: &mut dyn TrajectorySink,
    ) -> Result<CollectionOutcome> {
        let agents = self.agents_for(scenario);
        let config = self.episode_config();
        let mut ctx = EpisodeContext {
            agents: &agents,
            prompts: &self.prompts,
            cache,
            clock: self.clock.as_ref(),
            config: &config,
        };
        Ok(collect_dataset(scenario, spec, &mut ctx, sink)?)
    }
}

fn config_error(e: Error) -> Error {
    Error::Config(e.to_string())
}

/// Spawn region of the first goal's subject, if it is sampled uniformly.
pub fn subject_region(scenario: &Scenario) -> Option<([f64; 2], [f64; 2])> {
    let subject = &scenario.goals.first()?.subject;
    scenario
        .objects
        .iter()
        .find(|o| &o.label == subject)
        .and_then(|o| match &o.placement {
            Placement::UniformRegion { min, max } => Some((*min, *max)),
            _ => None,
        })
}

pub fn format_episode(r: &EpisodeResult) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "task: {}  (scenario {}, seed {})",
        r.task_text, r.scenario, r.seed
    );
    for rec in &r.subtask_transcript {
        let st = &rec.subtask;
        let _ = writeln!(s, "  [{}] {}", st.id, st.text);
        let _ = writeln!(s, "      keywords: {}", st.keywords.join(", "));
        for o in &rec.objects {
            let c = o.center;
            let _ = writeln!(
                s,
                "      {} #{} at ({:.3}, {:.3}, {:.3}){}",
                o.label,
                o.instance_index,
                c.x,
                c.y,
                c.z,
                if o.grasp_fallback {
                    ", fallback grasp"
                } else {
                    ""
                }
            );
        }
        for w in &rec.warnings {
            let _ = writeln!(s, "      warning: {w:?}");
        }
        let rep = &rec.report;
        let source = rep
            .source
            .map(|src| format!("{src:?}").to_lowercase())
            .unwrap_or_else(|| "none".into());
        let _ = writeln!(
            s,
            "      {} via {source}, {} step(s), {} backend call(s){}",
            if rep.success { "succeeded" } else { "failed" },
            rep.steps.len(),
            rep.backend_calls,
            rep.error
                .as_ref()
                .map(|e| format!(": {e}"))
                .unwrap_or_default()
        );
        for step in &rep.steps {
            let p = step.action.position;
            let _ = writeln!(
                s,
                "        {:<5} ({:.3}, {:.3}, {:.3})  {}",
                format!("{:?}", step.action.gripper).to_lowercase(),
                p.x,
                p.y,
                p.z,
                step.action.annotation
            );
        }
    }
    let verdict = match r.failure {
        None if r.success => "success".to_string(),
        Some(f) => format!("failure ({})", reason_name(f)),
        None => "failure".to_string(),
    };
    let _ = writeln!(s, "result: {verdict}");
    if let Some(d) = &r.failure_detail {
        let _ = writeln!(s, "detail: {d}");
    }
    let _ = writeln!(
        s,
        "backend calls: {} (action generation {}), cache hits: {}, time: {:.1} s",
        r.backend_call_count, r.action_call_count, r.cache_hits, r.wall_time
    );
    s
}

pub fn reason_name(r: FailureReason) -> String {
    serde_json::to_value(r)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_else(|| format!("{r:?}"))
}

/// Aligned per-task table: one column per repeat, then the mean.
pub fn format_bench_table(report: &BenchmarkReport) -> String {
    let repeats = report
        .tasks
        .iter()
        .map(|t| t.per_repeat.len())
        .max()
        .unwrap_or(0);
    let name_w = report
        .tasks
        .iter()
        .map(|t| t.scenario.len())
        .max()
        .unwrap_or(0)
        .max("average".len());
    let mut s = String::new();
    let _ = write!(s, "{:<name_w$}", "scenario");
    for r in 1..=repeats {
        let _ = write!(s, "  {:>7}", format!("run {r}"));
    }
    let _ = writeln!(s, "  {:>7}", "mean");
    for t in &report.tasks {
        let _ = write!(s, "{:<name_w$}", t.scenario);
        for v in &t.per_repeat {
            let _ = write!(s, "  {v:>7.1}");
        }
        let _ = writeln!(s, "  {:>7.1}", t.rate);
    }
    let pad = repeats * 9;
    let _ = writeln!(
        s,
        "{:<name_w$}{:pad$}  {:>7.1}",
        "average", "", report.average
    );
    let _ = writeln!(
        s,
        "episodes: {}, backend calls: {}, cache hits: {}",
        report.episodes, report.backend_calls, report.cache_hits
    );
    if !report.failures.is_empty() {
        let list: Vec<String> = report
            .failures
            .iter()
            .map(|(r, n)| format!("{} {n}", reason_name(*r)))
            .collect();
        let _ = writeln!(s, "failures: {}", list.join(", "));
    }
    s
}

pub fn format_stats(stats: &DatasetStats) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "episodes: {}  valid: {}  success rate: {:.2}%",
        stats.total, stats.valid, stats.success_rate
    );
    let _ = writeln!(
        s,
        "duration: {:.1} s  mean episode: {:.1} s  interventions: {}",
        stats.total_duration, stats.mean_episode_duration, stats.interventions
    );
    if let Some(gap) = stats.mean_time_between_interventions {
        let _ = writeln!(s, "mean time between interventions: {gap:.1} s");
    }
    s
}
