use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{run_episode, AgentSet, EpisodeConfig, EpisodeContext, FailureReason};
use crate::clock::Clock;
use crate::controller::ActionStore;
use crate::prompts::PromptLibrary;
use crate::simworld::{mix_seed, spawn_scene, Scenario};

/// Rounds half away from zero at `decimals` places, tolerating binary noise just below the half.
pub fn round_half_up(x: f64, decimals: u32) -> f64 {
    let scale = libm::pow(10.0, f64::from(decimals));
    let scaled = x * scale;
    let nudge = 1e-9 * libm::fabs(scaled).max(1.0);
    let r = if scaled >= 0.0 {
        libm::floor(scaled + 0.5 + nudge)
    } else {
        -libm::floor(-scaled + 0.5 + nudge)
    };
    r / scale
}

/// Mean of per-task success rates, rounded to one decimal as in a results table.
pub fn table_average(rates: &[f64]) -> f64 {
    if rates.is_empty() {
        return 0.0;
    }
    round_half_up(rates.iter().sum::<f64>() / rates.len() as f64, 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchmarkSpec {
    pub episodes_per_task: u32,
    pub repeats: u32,
    pub base_seed: u64,
}

impl Default for BenchmarkSpec {
    fn default() -> Self {
        Self {
            episodes_per_task: 24,
            repeats: 3,
            base_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRate {
    pub scenario: String,
    /// Success percentage of each repeat.
    pub per_repeat: Vec<f64>,
    /// Mean over repeats, percent.
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub tasks: Vec<TaskRate>,
    /// Mean of task rates, one decimal.
    pub average: f64,
    pub episodes: u64,
    pub backend_calls: u64,
    pub cache_hits: u64,
    /// Simulated seconds over all episodes.
    pub sim_seconds: f64,
    /// Every detector phrase sent during the run.
    pub detector_queries: Vec<String>,
    /// Failed episodes by reason. Scenes that could not be spawned are not counted here.
    pub failures: BTreeMap<FailureReason, u64>,
}

/// Seed of one benchmark episode.
pub fn episode_seed(base: u64, task: usize, repeat: u32, episode: u32) -> u64 {
    mix_seed(&[base, task as u64, u64::from(repeat), u64::from(episode)])
}

/// Runs every scenario `episodes_per_task` times per repeat.
///
/// Each repeat starts with a fresh cache from `new_cache`, shared by all
/// tasks and episodes within it. Agents come from `agents_for`, once per
/// scenario and repeat.
pub fn run_benchmark(
    scenarios: &[Scenario],
    spec: &BenchmarkSpec,
    config: &EpisodeConfig,
    prompts: &PromptLibrary,
    clock: &dyn Clock,
    agents_for: &mut dyn FnMut(&Scenario) -> AgentSet,
    new_cache: &mut dyn FnMut() -> Box<dyn ActionStore>,
) -> BenchmarkReport {
    let mut successes = alloc::vec![alloc::vec![0u32; spec.repeats as usize]; scenarios.len()];
    let mut episodes = 0u64;
    let mut backend_calls = 0u64;
    let mut cache_hits = 0u64;
    let mut sim_seconds = 0.0;
    let mut detector_queries = Vec::new();
    let mut failures = BTreeMap::new();
    for repeat in 0..spec.repeats {
        let mut cache = new_cache();
        for (t, scenario) in scenarios.iter().enumerate() {
            let agents = agents_for(scenario);
            for e in 0..spec.episodes_per_task {
                let seed = episode_seed(spec.base_seed, t, repeat, e);
                episodes += 1;
                let Ok(world) = spawn_scene(scenario, seed) else {
                    continue;
                };
                let mut ctx = EpisodeContext {
                    agents: &agents,
                    prompts,
                    cache: cache.as_mut(),
                    clock,
                    config,
                };
                let r = run_episode(&scenario.task, scenario, world, &mut ctx);
                if r.success {
                    successes[t][repeat as usize] += 1;
                }
                if let Some(reason) = r.failure {
                    *failures.entry(reason).or_insert(0) += 1;
                }
                backend_calls += r.backend_call_count;
                cache_hits += r.cache_hits;
                sim_seconds += r.wall_time;
                detector_queries.extend(r.detector_queries);
            }
        }
    }
    let n = f64::from(spec.episodes_per_task.max(1));
    let tasks: Vec<TaskRate> = scenarios
        .iter()
        .zip(&successes)
        .map(|(s, reps)| {
            let per_repeat: Vec<f64> = reps.iter().map(|k| 100.0 * f64::from(*k) / n).collect();
            let rate = if per_repeat.is_empty() {
                0.0
            } else {
                per_repeat.iter().sum::<f64>() / per_repeat.len() as f64
            };
            TaskRate {
                scenario: s.name.clone(),
                per_repeat,
                rate,
            }
        })
        .collect();
    let rates: Vec<f64> = tasks.iter().map(|t| t.rate).collect();
    BenchmarkReport {
        average: table_average(&rates),
        tasks,
        episodes,
        backend_calls,
        cache_hits,
        sim_seconds,
        detector_queries,
        failures,
    }
}
