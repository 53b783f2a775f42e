use std::fs;

use maniagent::files::{
    load_calibration, load_prompts, load_scenario, load_transcript, read_structured, write_json,
};
use maniagent_core::gateway::{
    scripted_key, GatewayError, ModelBackend, ModelRequest, TranscriptRecord,
};
use maniagent_core::perception::CameraCalibration;
use maniagent_core::prompts::{PromptLibrary, SCENE_DESCRIPTION, STATUS_EVAL};
use maniagent_core::simworld::{builtin_scenarios, sim_camera, Scenario};

#[test]
fn scenarios_round_trip_through_json_and_toml() {
    let dir = tempfile::tempdir().unwrap();
    for scenario in builtin_scenarios() {
        let json = dir.path().join(format!("{}.json", scenario.name));
        write_json(&json, &scenario).unwrap();
        assert_eq!(load_scenario(&json).unwrap(), scenario);

        let toml_path = dir.path().join(format!("{}.toml", scenario.name));
        fs::write(&toml_path, toml::to_string(&scenario).unwrap()).unwrap();
        assert_eq!(load_scenario(&toml_path).unwrap(), scenario);
    }
}

#[test]
fn invalid_scenario_is_a_parse_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.json");
    let mut scenario: Scenario = builtin_scenarios().remove(0);
    scenario.goals.clear();
    write_json(&path, &scenario).unwrap();
    let err = load_scenario(&path).unwrap_err();
    assert_eq!(err.exit_code(), 1);
    assert!(err.to_string().contains("s.json"), "{err}");

    fs::write(&path, "{ not json").unwrap();
    assert!(load_scenario(&path).is_err());
}

#[test]
fn calibration_file_builds_the_same_camera() {
    let dir = tempfile::tempdir().unwrap();
    let cam = sim_camera();
    let cal = CameraCalibration::from(cam.clone());
    let path = dir.path().join("cam.toml");
    fs::write(&path, toml::to_string(&cal).unwrap()).unwrap();
    let loaded = load_calibration(&path).unwrap();
    assert_eq!(loaded.fx, cam.fx);
    assert_eq!((loaded.width, loaded.height), (cam.width, cam.height));
    assert!((loaded.origin() - cam.origin()).norm() < 1e-12);

    // a non-orthonormal rotation is refused
    let mut bad = cal;
    bad.rotation[0] = 2.0;
    write_json(&dir.path().join("bad.json"), &bad).unwrap();
    assert!(load_calibration(&dir.path().join("bad.json")).is_err());
}

#[test]
fn prompt_directory_overrides_builtins() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join(format!("{STATUS_EVAL}.txt")),
        "custom status prompt",
    )
    .unwrap();
    fs::write(dir.path().join("notes.md"), "ignored").unwrap();
    let lib = load_prompts(dir.path()).unwrap();
    let builtin = PromptLibrary::builtin();
    assert_eq!(lib.get(STATUS_EVAL).unwrap(), "custom status prompt");
    assert_eq!(
        lib.get(SCENE_DESCRIPTION).unwrap(),
        builtin.get(SCENE_DESCRIPTION).unwrap()
    );
    assert!(lib.get("notes").is_err());
    assert!(load_prompts(&dir.path().join("missing")).is_err());
}

#[test]
fn transcript_replays_in_order_per_key() {
    let dir = tempfile::tempdir().unwrap();
    let req = ModelRequest::new("status_v1").user("scene: one carrot");
    let key = scripted_key(&req);
    let records = vec![
        TranscriptRecord {
            key: key.clone(),
            replies: vec!["\"proceed\"".into()],
        },
        TranscriptRecord {
            key: key.clone(),
            replies: vec!["\"complete\"".into()],
        },
    ];
    let path = dir.path().join("t.json");
    write_json(&path, &records).unwrap();
    let back: Vec<TranscriptRecord> = read_structured(&path).unwrap();
    assert_eq!(back, records);

    let backend = load_transcript(&path).unwrap();
    assert_eq!(backend.invoke(&req).unwrap(), "\"proceed\"");
    assert_eq!(backend.invoke(&req).unwrap(), "\"complete\"");
    assert!(backend.invoke(&req).is_err());
    let other = ModelRequest::new("status_v1").user("scene: two carrots");
    assert!(matches!(
        backend.invoke(&other),
        Err(GatewayError::ScriptMiss { .. })
    ));
}
