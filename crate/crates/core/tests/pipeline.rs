use maniagent_core::controller::{
    canonical_prompt, ActionCache, ActionStore, DEFAULT_APPROACH_OFFSET,
};
use maniagent_core::harness::{run_episode, AgentSet, EpisodeConfig, EpisodeContext, ReplayReport};
use maniagent_core::prompts::PromptLibrary;
use maniagent_core::simworld::{benchmark_scenarios, builtin_scenario, spawn_scene};
use maniagent_core::ManualClock;
use proptest::prelude::*;

fn oracle_episode(name: &str, seed: u64) -> maniagent_core::harness::EpisodeResult {
    let scenario = builtin_scenario(name).unwrap();
    let agents = AgentSet::oracle(&scenario, DEFAULT_APPROACH_OFFSET);
    let prompts = PromptLibrary::builtin();
    let clock = ManualClock::new();
    let config = EpisodeConfig::default();
    let mut cache = ActionCache::new();
    let mut ctx = EpisodeContext {
        agents: &agents,
        prompts: &prompts,
        cache: &mut cache,
        clock: &clock,
        config: &config,
    };
    let world = spawn_scene(&scenario, seed).unwrap();
    run_episode(&scenario.task, &scenario, world, &mut ctx)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn oracle_episodes_succeed_for_any_seed(seed in any::<u64>(), which in 0usize..4) {
        let name = benchmark_scenarios()[which].name.clone();
        let r = oracle_episode(&name, seed);
        prop_assert!(r.success, "{} seed {}: {:?} {:?}", name, seed, r.failure, r.failure_detail);
    }

    #[test]
    fn episodes_are_deterministic(seed in any::<u64>()) {
        let a = oracle_episode("carrot_on_plate", seed);
        let b = oracle_episode("carrot_on_plate", seed);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn whitespace_never_changes_the_cache_key(words in prop::collection::vec("[a-z]{1,6}", 1..6), gaps in prop::collection::vec("[ \t\n]{1,3}", 6)) {
        let plain = words.join(" ");
        let mut spaced = gaps[0].clone();
        for (w, g) in words.iter().zip(gaps.iter().skip(1).cycle()) {
            spaced.push_str(w);
            spaced.push_str(g);
        }
        prop_assert_eq!(canonical_prompt(&spaced), plain);
    }
}

#[test]
fn episode_steps_replay_to_the_final_state() {
    use maniagent_core::harness::TrajectoryRecord;
    for s in benchmark_scenarios() {
        let r = oracle_episode(&s.name, 17);
        let record = TrajectoryRecord {
            format_version: maniagent_core::harness::TRAJECTORY_FORMAT_VERSION,
            episode_id: s.name.clone(),
            scenario: s.name.clone(),
            task_text: s.task.clone(),
            seed: 17,
            camera: s.camera.clone(),
            goals: s.goals.clone(),
            settings: EpisodeConfig::default().sim,
            initial_state: r.initial_state.clone(),
            steps: r.steps.clone(),
            final_state: r.final_state.clone(),
            success: r.success,
        };
        let report = ReplayReport::check(&record, 1e-12);
        assert!(report.matches, "{}: {:?}", s.name, report.diffs);
    }
}

#[test]
fn shared_cache_hits_on_the_second_episode() {
    let scenario = builtin_scenario("spoon_on_towel").unwrap();
    let agents = AgentSet::oracle(&scenario, DEFAULT_APPROACH_OFFSET);
    let prompts = PromptLibrary::builtin();
    let clock = ManualClock::new();
    let config = EpisodeConfig::default();
    let mut cache = ActionCache::new();
    for (seed, hits) in [(1, 0), (2, 1)] {
        let mut ctx = EpisodeContext {
            agents: &agents,
            prompts: &prompts,
            cache: &mut cache,
            clock: &clock,
            config: &config,
        };
        let r = run_episode(
            &scenario.task,
            &scenario,
            spawn_scene(&scenario, seed).unwrap(),
            &mut ctx,
        );
        assert!(r.success);
        assert_eq!(r.cache_hits, hits);
    }
    assert_eq!(cache.hit_count(), 1);
}
