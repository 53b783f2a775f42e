use std::fs;
use std::path::PathBuf;

use maniagent::config::{ClockKind, CollectMode, RunConfig};
use maniagent_core::gateway::BackendKind;
use maniagent_core::simworld::DistanceMetric;

fn env(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
    pairs
        .iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

#[test]
fn defaults_without_a_file() {
    let cfg = RunConfig::load(None, Vec::new()).unwrap();
    assert_eq!(cfg, RunConfig::default());
    assert_eq!(cfg.run.scenario, "carrot_on_plate");
    assert_eq!(cfg.run.clock, ClockKind::Simulated);
    assert_eq!(cfg.backends.max_retries, 2);
    assert_eq!(cfg.episode.loop_limit, 2);
    assert_eq!(cfg.bench.episodes, 24);
    assert_eq!(cfg.bench.repeats, 3);
    assert_eq!(cfg.collect.target, 25);
    for role in maniagent::config::ROLES {
        assert!(cfg.backends.profile(role).unwrap().is_oracle());
    }
}

#[test]
fn toml_file_sections() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.toml");
    fs::write(
        &path,
        r#"
[run]
scenario = "stack_blocks"
seed = 9
cache_path = "cache.json"

[backends]
action = "live:http://127.0.0.1:9/v1/chat/completions#small"
max_retries = 4

[episode]
loop_limit = 3

[noise]
center_jitter_sigma_m = 0.01
drop_prob = 0.1

[goal]
threshold = 0.2
metric = "euclidean"

[collect]
mode = "random"
target = 5
"#,
    )
    .unwrap();
    let cfg = RunConfig::load(Some(&path), Vec::new()).unwrap();
    assert_eq!(cfg.run.scenario, "stack_blocks");
    assert_eq!(cfg.run.seed, 9);
    assert_eq!(cfg.run.cache_path, Some(PathBuf::from("cache.json")));
    assert_eq!(cfg.episode.loop_limit, 3);
    assert_eq!(cfg.noise.center_jitter_sigma_m, 0.01);
    assert_eq!(cfg.noise.drop_prob, 0.1);
    assert_eq!(cfg.goal.threshold, Some(0.2));
    assert_eq!(cfg.goal.metric, Some(DistanceMetric::Euclidean));
    assert_eq!(cfg.collect.mode, CollectMode::Random);
    let action = cfg.backends.profile("action").unwrap();
    assert_eq!(action.kind, BackendKind::Live);
    assert_eq!(action.model_name, "small");
    assert_eq!(action.max_retries, 4);
    assert!(cfg.backends.profile("plan").unwrap().is_oracle());

    // the serialized form loads back to the same value
    assert_eq!(
        RunConfig::from_toml_str(&cfg.to_toml_string()).unwrap(),
        cfg
    );
}

#[test]
fn environment_overrides_file_values() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.toml");
    fs::write(&path, "[episode]\nloop_limit = 5\n").unwrap();
    let cfg = RunConfig::load(
        Some(&path),
        env(&[
            ("MANIAGENT_EPISODE__LOOP_LIMIT", "3"),
            ("MANIAGENT_NOISE__DROP_PROB", "0.05"),
            ("MANIAGENT_RUN__SCENARIO", "spoon_on_towel"),
            (
                "MANIAGENT_BENCH__SCENARIOS",
                "[\"stack_blocks\", \"cutlery\"]",
            ),
            ("MANIAGENT_API_KEY", "ignored: no section separator"),
            ("HOME", "/root"),
        ]),
    )
    .unwrap();
    assert_eq!(cfg.episode.loop_limit, 3);
    assert_eq!(cfg.noise.drop_prob, 0.05);
    assert_eq!(cfg.run.scenario, "spoon_on_towel");
    assert_eq!(cfg.bench.scenarios, vec!["stack_blocks", "cutlery"]);
}

#[test]
fn set_layer_wins_over_environment() {
    let cfg = RunConfig::load_layers(
        None,
        env(&[("MANIAGENT_EPISODE__LOOP_LIMIT", "3")]),
        env(&[("MANIAGENT_EPISODE__LOOP_LIMIT", "7")]),
    )
    .unwrap();
    assert_eq!(cfg.episode.loop_limit, 7);
}

#[test]
fn bad_configs_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        ("unknown key", "[episode]\nloop_limt = 3\n"),
        ("unknown section", "[episodes]\nloop_limit = 3\n"),
        ("wrong type", "[episode]\nloop_limit = \"three\"\n"),
        ("zero loop limit", "[episode]\nloop_limit = 0\n"),
        (
            "bad backend kind",
            "[backends]\ndefault = \"carrier-pigeon:coop\"\n",
        ),
        ("probability out of range", "[noise]\ndrop_prob = 1.5\n"),
        ("syntax", "[episode\n"),
    ];
    for (what, text) in cases {
        let path = dir.path().join("bad.toml");
        fs::write(&path, text).unwrap();
        let err = RunConfig::load(Some(&path), Vec::new()).unwrap_err();
        assert_eq!(err.exit_code(), 2, "{what}: {err}");
    }

    let missing = dir.path().join("nope.toml");
    let err = RunConfig::load(Some(&missing), Vec::new()).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("not found"), "{err}");

    let err = RunConfig::load(None, env(&[("MANIAGENT_BACKENDS__DEFAULT", "bogus")])).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}
