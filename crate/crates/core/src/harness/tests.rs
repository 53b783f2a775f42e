use alloc::boxed::Box;
use alloc::format;
use alloc::string::ToString;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use proptest::prelude::*;

use super::collect::ResetMode;
use super::*;
use crate::clock::ManualClock;
use crate::controller::{ActionCache, ActionSource, DEFAULT_APPROACH_OFFSET};
use crate::gateway::{FnBackend, ModelRequest, Schema};
use crate::prompts::sections;
use crate::simworld::{builtin_scenario, check_success, spawn_scene, Region};

fn oracle_agents(s: &Scenario) -> AgentSet {
    AgentSet::oracle(s, DEFAULT_APPROACH_OFFSET)
}

struct Rig {
    agents: AgentSet,
    prompts: PromptLibrary,
    cache: ActionCache,
    clock: ManualClock,
    config: EpisodeConfig,
}

impl Rig {
    fn new(s: &Scenario) -> Self {
        Self {
            agents: oracle_agents(s),
            prompts: PromptLibrary::builtin(),
            cache: ActionCache::new(),
            clock: ManualClock::new(),
            config: EpisodeConfig::default(),
        }
    }

    fn run(&mut self, s: &Scenario, seed: u64) -> EpisodeResult {
        let world = spawn_scene(s, seed).unwrap();
        let mut ctx = EpisodeContext {
            agents: &self.agents,
            prompts: &self.prompts,
            cache: &mut self.cache,
            clock: &self.clock,
            config: &self.config,
        };
        run_episode(&s.task, s, world, &mut ctx)
    }
}

#[test]
fn carrot_episode_succeeds_in_one_subtask() {
    let s = builtin_scenario("carrot_on_plate").unwrap();
    let mut rig = Rig::new(&s);
    let r = rig.run(&s, 11);
    assert!(r.success, "{:?} {:?}", r.failure, r.failure_detail);
    assert_eq!(r.final_verdict, Some(Verdict::TaskComplete));
    assert_eq!(r.subtask_transcript.len(), 1);
    assert!(check_success(&r.final_state, &s.goals[0]).unwrap());
    assert_eq!(r.detector_queries, ["every carrot", "every plate"]);
    assert_eq!(r.steps.len(), 6);
    assert_eq!(r.backend_call_count, rig.agents.call_count());
    // scene, status, plan, keywords, action, then scene and status again
    assert_eq!(r.backend_call_count, 7);
    assert_eq!(r.action_call_count, 1);
    assert!(r.wall_time > 0.0);
    let ts: Vec<f64> = r.steps.iter().map(|s| s.timestamp).collect();
    assert!(ts.windows(2).all(|w| w[0] < w[1]));
}

#[test]
fn every_builtin_scenario_succeeds_noiselessly() {
    for s in builtin_scenarios_all() {
        for seed in 0..4 {
            let mut rig = Rig::new(&s);
            let r = rig.run(&s, seed);
            assert!(
                r.success,
                "{} seed {seed}: {:?} {:?}",
                s.name, r.failure, r.failure_detail
            );
            assert!(r.detector_queries.iter().all(|q| q.starts_with("every ")));
        }
    }
}

fn builtin_scenarios_all() -> Vec<Scenario> {
    crate::simworld::builtin_scenarios()
}

#[test]
fn middle_pepper_is_the_one_moved() {
    let s = builtin_scenario("pepper_line").unwrap();
    let mut rig = Rig::new(&s);
    let r = rig.run(&s, 0);
    assert!(r.success);
    let peppers = r.final_state.find("pepper");
    let moved: Vec<usize> = peppers
        .iter()
        .copied()
        .filter(|i| r.final_state.objects[*i].position != r.initial_state.objects[*i].position)
        .collect();
    assert_eq!(moved, vec![peppers[1]]);
    assert_eq!(rig.agents.disambiguate.call_count(), 1);
}

#[test]
fn cutlery_takes_two_subtasks() {
    let s = builtin_scenario("cutlery").unwrap();
    let mut rig = Rig::new(&s);
    let r = rig.run(&s, 2);
    assert!(r.success);
    assert_eq!(r.subtask_transcript.len(), 2);
}

#[test]
fn prewarmed_cache_saves_exactly_the_action_calls() {
    let s = builtin_scenario("carrot_on_plate").unwrap();
    let mut rig = Rig::new(&s);
    let cold = rig.run(&s, 5);
    let warm = rig.run(&s, 5);
    assert!(cold.success && warm.success);
    assert_eq!(cold.cache_hits, 0);
    assert_eq!(warm.cache_hits, 1);
    assert_eq!(warm.action_call_count, 0);
    assert_eq!(
        cold.backend_call_count - warm.backend_call_count,
        cold.action_call_count
    );
    let src = warm.subtask_transcript[0].report.source;
    assert_eq!(src, Some(ActionSource::Cache));
    let a: Vec<_> = cold.steps.iter().map(|s| &s.action).collect();
    let b: Vec<_> = warm.steps.iter().map(|s| &s.action).collect();
    assert_eq!(a, b);
}

/// Planner that always proposes the same unreachable-by-perception sub-task.
fn stubborn_agents(subtask: &'static str) -> AgentSet {
    let backend = FnBackend::new(move |req: &ModelRequest| {
        Ok(match Schema::parse(&req.schema) {
            Some(Schema::Scene) => {
                r#"{"description": "a carrot and a plate", "objects": ["carrot", "plate"]}"#
                    .to_string()
            }
            Some(Schema::Status) => {
                r#"{"verdict": "proceed", "rationale": "not done"}"#.to_string()
            }
            Some(Schema::Subtask) => format!(r#"{{"subtask": "{subtask}"}}"#),
            Some(Schema::Keywords) => r#"{"keywords": ["unicorn"], "descriptors": {}}"#.to_string(),
            _ => "{}".to_string(),
        })
    });
    AgentSet::uniform(Arc::new(Gateway::new(Arc::new(backend), 2)))
}

#[test]
fn loop_guard_ends_repeated_failure() {
    let s = builtin_scenario("carrot_on_plate").unwrap();
    for limit in 1..=4 {
        let mut rig = Rig::new(&s);
        rig.agents = stubborn_agents("pick up the unicorn");
        rig.config.loop_limit = limit;
        let r = rig.run(&s, 0);
        assert!(!r.success);
        assert_eq!(r.failure, Some(FailureReason::LoopDetected));
        assert_eq!(r.final_verdict, Some(Verdict::TaskFailed));
        assert_eq!(r.subtask_transcript.len() as u32, limit);
        assert!(r
            .subtask_transcript
            .iter()
            .all(|t| t.report.failure == Some(FailureKind::Perception)));
    }
}

#[test]
fn episode_cap_and_timeout() {
    let s = builtin_scenario("carrot_on_plate").unwrap();
    let mut rig = Rig::new(&s);
    rig.agents = stubborn_agents("pick up the unicorn");
    rig.config.loop_limit = 100;
    rig.config.episode_cap = 3;
    let r = rig.run(&s, 0);
    assert_eq!(r.failure, Some(FailureReason::EpisodeCap));
    assert_eq!(r.subtask_transcript.len(), 3);

    let mut rig = Rig::new(&s);
    rig.agents = stubborn_agents("pick up the unicorn");
    rig.config.loop_limit = 100;
    rig.config.episode_cap = 100;
    rig.config.timeout_s = 30.0;
    let r = rig.run(&s, 0);
    assert_eq!(r.failure, Some(FailureReason::Timeout));
    assert!(r.wall_time >= 30.0);
}

#[test]
fn transport_errors_end_the_episode() {
    let s = builtin_scenario("carrot_on_plate").unwrap();
    let mut rig = Rig::new(&s);
    let down = FnBackend::new(|_: &ModelRequest| {
        Err(GatewayError::Transport("connection refused".to_string()))
    });
    rig.agents = AgentSet::uniform(Arc::new(Gateway::new(Arc::new(down), 2)));
    let r = rig.run(&s, 0);
    assert_eq!(r.failure, Some(FailureReason::Transport));
    assert!(!r.success);
}

#[test]
fn unreachable_waypoint_is_a_reach_failure() {
    let s = builtin_scenario("carrot_on_plate").unwrap();
    let mut rig = Rig::new(&s);
    let w = spawn_scene(&s, 3).unwrap();
    let c = w.objects[w.find("carrot")[0]].position;
    rig.config.sim.unreachable = vec![Region::column([c.x, c.y], 0.02, 1.0)];
    let r = rig.run(&s, 3);
    assert_eq!(r.failure, Some(FailureReason::Reach));
    assert!(rig.cache.is_empty());
}

#[test]
fn noisy_detection_is_deterministic() {
    let s = builtin_scenario("carrot_on_plate").unwrap();
    let run = || {
        let mut rig = Rig::new(&s);
        rig.config.noise = NoiseSpec {
            center_jitter_sigma_m: 0.02,
            drop_prob: 0.05,
            depth_hole_prob: 0.0,
        };
        (0..10).map(|seed| rig.run(&s, seed)).collect::<Vec<_>>()
    };
    let a = run();
    let b = run();
    assert_eq!(
        serde_json::to_string(&a).unwrap(),
        serde_json::to_string(&b).unwrap()
    );
}

#[test]
fn depth_holes_surface_as_warnings_or_failures() {
    let s = builtin_scenario("carrot_on_plate").unwrap();
    let mut rig = Rig::new(&s);
    rig.config.noise.depth_hole_prob = 1.0;
    let r = rig.run(&s, 0);
    assert!(!r.success);
    let first = &r.subtask_transcript[0];
    assert_eq!(first.report.failure, Some(FailureKind::Perception));
}

#[test]
fn benchmark_rows_average() {
    assert_eq!(table_average(&[87.5, 95.8, 91.7, 72.2]), 86.8);
    assert_eq!(table_average(&[15.0, 50.8, 71.7, 67.5]), 51.3);
    assert_eq!(round_half_up(0.125, 2), 0.13);
    assert_eq!(round_half_up(81.665, 2), 81.67);
    assert_eq!(round_half_up(-1.25, 1), -1.3);
}

#[test]
fn small_oracle_benchmark_is_perfect_and_clears_cache_per_repeat() {
    let scenarios = crate::simworld::benchmark_scenarios();
    let clock = ManualClock::new();
    let prompts = PromptLibrary::builtin();
    let spec = BenchmarkSpec {
        episodes_per_task: 2,
        repeats: 2,
        base_seed: 9,
    };
    let report = run_benchmark(
        &scenarios,
        &spec,
        &EpisodeConfig::default(),
        &prompts,
        &clock,
        &mut |s| oracle_agents(s),
        &mut || Box::new(ActionCache::new()),
    );
    assert_eq!(report.average, 100.0);
    assert_eq!(report.episodes, 16);
    assert!(report.tasks.iter().all(|t| t.per_repeat == [100.0, 100.0]));
    // Within a repeat the second episode of each task hits the cache.
    assert_eq!(report.cache_hits, 8);
}

#[test]
fn stats_fixtures() {
    let tallies = |valid: usize, total: usize| -> Vec<EpisodeTally> {
        (0..total)
            .map(|i| EpisodeTally {
                success: i < valid,
                wall_time: 120.0,
            })
            .collect()
    };
    let s = compute_stats(&tallies(450, 551), 15, 19.5 * 3600.0).unwrap();
    assert_eq!(s.success_rate, 81.67);
    assert_eq!(s.mean_time_between_interventions, Some(4680.0));
    assert_eq!(s.mean_episode_duration, 120.0);
    assert_eq!(
        compute_stats(&tallies(0, 10), 0, 1.0).unwrap().success_rate,
        0.0
    );
    assert_eq!(
        compute_stats(&tallies(10, 10), 0, 1.0)
            .unwrap()
            .success_rate,
        100.0
    );
    assert_eq!(
        compute_stats(&tallies(10, 10), 0, 1.0)
            .unwrap()
            .mean_time_between_interventions,
        None
    );
    assert_eq!(compute_stats(&[], 0, 1.0), Err(StatsError::Empty));
}

fn collect(s: &Scenario, target: u32, unreachable: Vec<Region>) -> (CollectionOutcome, MemorySink) {
    let mut rig = Rig::new(s);
    rig.config.sim.unreachable = unreachable;
    let spec = CollectSpec::grid(target, [0.2, -0.25], [0.3, -0.12]);
    let mut sink = MemorySink::default();
    let mut ctx = EpisodeContext {
        agents: &rig.agents,
        prompts: &rig.prompts,
        cache: &mut rig.cache,
        clock: &rig.clock,
        config: &rig.config,
    };
    let out = collect_dataset(s, &spec, &mut ctx, &mut sink).unwrap();
    (out, sink)
}

#[test]
fn grid_collection_yields_replayable_trajectories() {
    let s = builtin_scenario("carrot_on_plate").unwrap();
    let (out, sink) = collect(&s, 25, Vec::new());
    let stats = out.stats.unwrap();
    assert_eq!(stats.valid, 25);
    assert_eq!(stats.total, 25);
    assert_eq!(stats.interventions, 0);
    assert_eq!(sink.records.len(), 25);
    let mut starts: Vec<[f64; 2]> = Vec::new();
    for r in &sink.records {
        let report = ReplayReport::check(r, 1e-12);
        assert!(report.matches, "{:?}", report.diffs);
        let c = &r.initial_state.objects[r.initial_state.find("carrot")[0]];
        let xy = [c.position.x, c.position.y];
        assert!(!starts.contains(&xy));
        starts.push(xy);
    }
}

#[test]
fn unreachable_cells_count_as_interventions() {
    let s = builtin_scenario("carrot_on_plate").unwrap();
    let grid = crate::simworld::grid_positions([0.2, -0.25], [0.3, -0.12], 5, 5);
    let blocked: Vec<Region> = [2usize, 11, 23]
        .iter()
        .map(|k| Region::column(grid[*k], 0.01, 1.0))
        .collect();
    let (out, sink) = collect(&s, 25, blocked);
    let stats = out.stats.unwrap();
    assert_eq!(stats.interventions, 3);
    assert_eq!(stats.valid, 22);
    assert_eq!(sink.records.len(), 22);
    let skipped: Vec<u32> = out
        .positions
        .iter()
        .filter(|p| p.outcome == PositionOutcome::Intervention)
        .map(|p| p.index)
        .collect();
    assert_eq!(skipped, [2, 11, 23]);
    assert!(stats.mean_time_between_interventions.is_some());
}

#[test]
fn tampered_record_fails_replay() {
    let s = builtin_scenario("carrot_on_plate").unwrap();
    let (_, sink) = collect(&s, 1, Vec::new());
    let mut r = sink.records[0].clone();
    r.final_state.objects[0].position.x += 0.05;
    let report = ReplayReport::check(&r, 1e-9);
    assert!(!report.matches);
    assert!(report.diffs[0].contains("position off"));
}

#[test]
fn random_reset_mode_collects() {
    let s = builtin_scenario("spoon_on_towel").unwrap();
    let mut rig = Rig::new(&s);
    let spec = CollectSpec {
        target_count: 3,
        reset: ResetMode::Random,
        attempts_per_position: 3,
        base_seed: 4,
    };
    let mut sink = MemorySink::default();
    let mut ctx = EpisodeContext {
        agents: &rig.agents,
        prompts: &rig.prompts,
        cache: &mut rig.cache,
        clock: &rig.clock,
        config: &rig.config,
    };
    let out = collect_dataset(&s, &spec, &mut ctx, &mut sink).unwrap();
    assert_eq!(out.stats.unwrap().valid, 3);
}

#[test]
fn call_count_deduplicates_shared_gateways() {
    let s = builtin_scenario("carrot_on_plate").unwrap();
    let shared = Arc::new(Gateway::new(
        Arc::new(crate::oracle::OracleBackend::for_scenario(&s)),
        2,
    ));
    let agents = AgentSet::uniform(shared.clone());
    let req = ModelRequest::new(Schema::Status.id()).user("[scene]\nthe carrot is on the plate");
    shared.complete(&req).unwrap();
    assert_eq!(agents.call_count(), 1);
    assert!(sections(&req.user_text()).contains_key("scene"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn stats_invariants(valid in 0usize..600, extra in 0usize..600, interventions in 0u64..50) {
        let total = valid + extra;
        prop_assume!(total > 0);
        let tallies: Vec<EpisodeTally> = (0..total).map(|i| EpisodeTally { success: i < valid, wall_time: 1.0 }).collect();
        let s = compute_stats(&tallies, interventions, 100.0).unwrap();
        prop_assert!(s.valid <= s.total);
        let exact = 100.0 * valid as f64 / total as f64;
        prop_assert!((s.success_rate - exact).abs() <= 0.005 + 1e-9);
        prop_assert_eq!(s.success_rate, round_half_up(s.success_rate, 2));
    }
}
