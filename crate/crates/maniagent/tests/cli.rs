mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};
use std::sync::{Arc, Mutex};

use maniagent::config::RunConfig;
use maniagent::files::write_json;
use maniagent_core::controller::ActionCache;
use maniagent_core::gateway::{
    scripted_key, Gateway, GatewayError, ModelBackend, ModelRequest, TranscriptRecord,
};
use maniagent_core::harness::{run_episode, AgentSet, EpisodeContext, EpisodeResult};
use maniagent_core::oracle::OracleBackend;
use maniagent_core::prompts::PromptLibrary;
use maniagent_core::simworld::{builtin_scenario, spawn_scene};
use maniagent_core::ManualClock;

fn maniagent(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_maniagent"))
        .args(args)
        .env_remove("MANIAGENT_RUN__CACHE_PATH")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn run_succeeds_with_defaults() {
    let o = maniagent(&["run", "--seed", "3"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("result: success"), "{text}");

    let o = maniagent(&["run", "--scenario", "stack_blocks", "--json"]);
    assert_eq!(o.status.code(), Some(0));
    let r: EpisodeResult = serde_json::from_slice(&o.stdout).unwrap();
    assert!(r.success);
    assert_eq!(r.scenario, "stack_blocks");
}

#[test]
fn config_problems_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.toml");
    let o = maniagent(&["--config", missing.to_str().unwrap(), "run"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("not found"), "{}", stderr(&o));

    let o = maniagent(&["run", "--backend", "telepathy:now"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));

    let o = maniagent(&["run", "--scenario", "juggle_chainsaws"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));

    let o = maniagent(&["--set", "episode.loop_limit=0", "run"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));

    let o = maniagent(&["run", "--seed", "not-a-number"]);
    assert_eq!(o.status.code(), Some(2));
    let o = maniagent(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn help_and_version_exit_zero() {
    let o = maniagent(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    for cmd in ["run", "bench", "collect", "replay", "cache-inspect"] {
        assert!(stdout(&o).contains(cmd), "help lists {cmd}");
    }
    assert_eq!(maniagent(&["--version"]).status.code(), Some(0));
}

#[test]
fn environment_and_set_layers_reach_the_run() {
    let o = Command::new(env!("CARGO_BIN_EXE_maniagent"))
        .args(["--set", "run.scenario=spoon_on_towel", "run", "--json"])
        .env("MANIAGENT_RUN__SCENARIO", "stack_blocks")
        .env("MANIAGENT_RUN__SEED", "11")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let r: EpisodeResult = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(r.scenario, "spoon_on_towel");
    assert_eq!(r.seed, 11);
}

#[test]
fn bench_prints_a_table_and_writes_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report.json");
    let o = maniagent(&[
        "bench",
        "--episodes",
        "2",
        "--repeats",
        "2",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    let rows: Vec<&str> = text.lines().collect();
    assert!(rows[0].contains("run 1") && rows[0].contains("run 2") && rows[0].contains("mean"));
    for name in [
        "stack_blocks",
        "carrot_on_plate",
        "spoon_on_towel",
        "eggplant_in_basket",
    ] {
        assert!(
            rows.iter()
                .any(|r| r.starts_with(name) && r.ends_with("100.0")),
            "{name}: {text}"
        );
    }
    assert!(rows
        .iter()
        .any(|r| r.starts_with("average") && r.ends_with("100.0")));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(report["tasks"].as_array().unwrap().len(), 4);
}

#[test]
fn collect_then_replay_then_tamper() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let o = maniagent(&["collect", "--target", "4", "--out", data.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(stdout(&o).matches("wrote ").count(), 4, "{}", stdout(&o));
    assert!(data.join("summary.json").is_file());

    let o = maniagent(&["replay", data.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert_eq!(stdout(&o).matches("ok ").count(), 4);

    let victim = maniagent::dataset::list_trajectories(&data)
        .unwrap()
        .remove(0);
    let text = fs::read_to_string(&victim).unwrap();
    let footer_at = text.trim_end().rfind('\n').unwrap() + 1;
    let mut footer: serde_json::Value = serde_json::from_str(&text[footer_at..]).unwrap();
    let x = footer["final_state"]["objects"][0]["position"][0]
        .as_f64()
        .unwrap();
    footer["final_state"]["objects"][0]["position"][0] = (x + 0.05).into();
    fs::write(&victim, format!("{}{}\n", &text[..footer_at], footer)).unwrap();

    let o = maniagent(&["replay", victim.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let text = stdout(&o);
    assert!(text.starts_with("MISMATCH"), "{text}");
    assert!(text.contains("position off by"), "{text}");
}

#[test]
fn collect_with_unreachable_zone_logs_interventions() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let o = maniagent(&[
        "collect",
        "--target",
        "9",
        "--min",
        "0.2,-0.25",
        "--max",
        "0.4,-0.15",
        "--unreachable",
        "0.35,-0.3,-1,0.5,-0.1,1",
        "--out",
        data.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(data.join("summary.json")).unwrap()).unwrap();
    let interventions = summary["positions"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|p| p["outcome"] == "intervention")
        .count();
    assert!(interventions > 0, "{}", stdout(&o));
    assert_eq!(summary["stats"]["interventions"], interventions as u64);
}

#[test]
fn cache_inspect_lists_entries() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("cache.json");
    let set = format!("run.cache_path=\"{}\"", cache.display());
    let o = maniagent(&["--set", &set, "run"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(cache.is_file());

    let o = maniagent(&["cache-inspect", "--cache", cache.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("pick_place"), "{}", stdout(&o));

    let o = maniagent(&[
        "cache-inspect",
        "--cache",
        cache.to_str().unwrap(),
        "--json",
    ]);
    let records: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(records.as_array().unwrap().len(), 1);

    // a second run reuses the stored sequence
    let o = maniagent(&["--set", &set, "run", "--json"]);
    let r: EpisodeResult = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!((r.action_call_count, r.cache_hits), (0, 1));

    let o = maniagent(&[
        "cache-inspect",
        "--cache",
        dir.path().join("none.json").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unreachable_live_backend_exits_with_three() {
    let spec = format!("live:{}#m", common::dead_url());
    let o = maniagent(&["--set", "backends.max_retries=0", "run", "--backend", &spec]);
    assert_eq!(o.status.code(), Some(3), "{}{}", stdout(&o), stderr(&o));
}

/// Oracle wrapper that keeps every reply under its transcript key.
struct Recorder {
    inner: OracleBackend,
    log: Mutex<Vec<(String, String)>>,
}

impl ModelBackend for Recorder {
    fn invoke(&self, request: &ModelRequest) -> Result<String, GatewayError> {
        let reply = self.inner.invoke(request)?;
        self.log
            .lock()
            .unwrap()
            .push((scripted_key(request), reply.clone()));
        Ok(reply)
    }
}

fn record_transcript(scenario: &str, seed: u64, path: &Path) -> EpisodeResult {
    let scenario = builtin_scenario(scenario).unwrap();
    let recorder = Arc::new(Recorder {
        inner: OracleBackend::for_scenario(&scenario),
        log: Mutex::new(Vec::new()),
    });
    let clock = Arc::new(ManualClock::new());
    let agents = AgentSet::uniform(Arc::new(
        Gateway::new(recorder.clone(), 2).with_clock(clock.clone()),
    ));
    let config = RunConfig::default().episode_config();
    let prompts = PromptLibrary::builtin();
    let mut cache = ActionCache::new();
    let mut ctx = EpisodeContext {
        agents: &agents,
        prompts: &prompts,
        cache: &mut cache,
        clock: clock.as_ref(),
        config: &config,
    };
    let world = spawn_scene(&scenario, seed).unwrap();
    let result = run_episode(&scenario.task, &scenario, world, &mut ctx);

    let records: Vec<TranscriptRecord> = recorder
        .log
        .lock()
        .unwrap()
        .iter()
        .map(|(key, reply)| TranscriptRecord {
            key: key.clone(),
            replies: vec![reply.clone()],
        })
        .collect();
    write_json(path, &records).unwrap();
    result
}

#[test]
fn recorded_transcript_reproduces_the_episode() {
    let dir = tempfile::tempdir().unwrap();
    let transcript = dir.path().join("transcript.json");
    let expected = record_transcript("eggplant_in_basket", 5, &transcript);
    assert!(expected.success);

    let spec = format!("scripted:{}", transcript.display());
    let o = maniagent(&[
        "run",
        "--scenario",
        "eggplant_in_basket",
        "--seed",
        "5",
        "--backend",
        &spec,
        "--json",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let got: EpisodeResult = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(got.steps, expected.steps);
    assert_eq!(got.final_state, expected.final_state);
    assert_eq!(got.backend_call_count, expected.backend_call_count);
    assert!(got.success);

    // a transcript for another seed runs dry and the episode fails without panicking
    let o = maniagent(&[
        "run",
        "--scenario",
        "eggplant_in_basket",
        "--seed",
        "6",
        "--backend",
        &spec,
        "--json",
    ]);
    let other: EpisodeResult = serde_json::from_slice(&o.stdout).unwrap();
    assert!(!other.success);
}
