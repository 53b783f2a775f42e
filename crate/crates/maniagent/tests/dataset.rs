use std::fs;
use std::thread;

use maniagent::cache::PersistentCache;
use maniagent::config::RunConfig;
use maniagent::dataset::{
    decode_trajectory, encode_trajectory, list_trajectories, read_trajectory, trajectory_path,
    JsonlSink,
};
use maniagent::App;
use maniagent_core::harness::{PositionOutcome, ReplayReport, TrajectoryRecord};

fn collect_into(dir: &std::path::Path, scenario: &str, target: u32) -> Vec<TrajectoryRecord> {
    let app = App::new(RunConfig::default()).unwrap();
    let scenario = app.resolve_scenario(scenario).unwrap();
    let mut spec = app.collect_spec(&scenario).unwrap();
    spec.target_count = target;
    let mut sink = JsonlSink::new(dir).unwrap();
    let outcome = app
        .collect(
            &scenario,
            &spec,
            &mut PersistentCache::in_memory(),
            &mut sink,
        )
        .unwrap();
    let valid = outcome
        .positions
        .iter()
        .filter(|p| p.outcome == PositionOutcome::Valid)
        .count();
    assert_eq!(valid, sink.written().len());
    sink.written()
        .iter()
        .map(|p| read_trajectory(p).unwrap())
        .collect()
}

#[test]
fn collected_files_read_back_and_replay() {
    let dir = tempfile::tempdir().unwrap();
    let records = collect_into(dir.path(), "carrot_on_plate", 4);
    assert_eq!(records.len(), 4);
    assert_eq!(list_trajectories(dir.path()).unwrap().len(), 4);
    for r in &records {
        assert!(r.success);
        assert!(!r.steps.is_empty());
        assert!(r.steps.windows(2).all(|w| w[0].timestamp <= w[1].timestamp));
        let report = ReplayReport::check(r, 1e-9);
        assert!(report.matches, "{:?}", report.diffs);
        // encode is the inverse of decode
        let path = trajectory_path(dir.path(), &r.episode_id);
        assert_eq!(
            encode_trajectory(r).unwrap(),
            fs::read_to_string(&path).unwrap()
        );
    }
}

#[test]
fn concurrent_writers_produce_distinct_files() {
    let dir = tempfile::tempdir().unwrap();
    let handles: Vec<_> = ["carrot_on_plate", "spoon_on_towel", "eggplant_in_basket"]
        .into_iter()
        .map(|name| {
            let dir = dir.path().to_path_buf();
            thread::spawn(move || collect_into(&dir, name, 2).len())
        })
        .collect();
    let written: usize = handles.into_iter().map(|h| h.join().unwrap()).sum();
    let files = list_trajectories(dir.path()).unwrap();
    assert_eq!(files.len(), written);
    for f in files {
        read_trajectory(&f).unwrap();
    }
    // no temporary files are left behind
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), written);
}

#[test]
fn damaged_files_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let record = collect_into(dir.path(), "carrot_on_plate", 1).remove(0);
    let text = encode_trajectory(&record).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    let origin = std::path::Path::new("t.jsonl");

    let truncated = lines[..lines.len() - 1].join("\n");
    let err = decode_trajectory(&truncated, origin).unwrap_err();
    assert!(err.to_string().contains("truncated"), "{err}");

    let newer = text.replacen("\"format_version\":1", "\"format_version\":99", 1);
    let err = decode_trajectory(&newer, origin).unwrap_err();
    assert!(err.to_string().contains("format version 99"), "{err}");

    let headless = lines[1..].join("\n");
    assert!(decode_trajectory(&headless, origin).is_err());

    let mut doubled = lines.clone();
    doubled.push(lines[1]);
    assert!(decode_trajectory(&doubled.join("\n"), origin).is_err());

    if lines.len() > 3 {
        let mut swapped = lines.clone();
        swapped.swap(1, 2);
        let err = decode_trajectory(&swapped.join("\n"), origin).unwrap_err();
        assert!(err.to_string().contains("timestamp"), "{err}");
    }

    let short = text.replacen(
        &format!("\"step_count\":{}", record.steps.len()),
        &format!("\"step_count\":{}", record.steps.len() + 1),
        1,
    );
    assert!(decode_trajectory(&short, origin).is_err());
    assert!(decode_trajectory("", origin).is_err());
}

#[test]
fn tampered_final_state_fails_replay() {
    let dir = tempfile::tempdir().unwrap();
    let mut record = collect_into(dir.path(), "carrot_on_plate", 1).remove(0);
    record.final_state.objects[0].position.x += 0.01;
    let report = ReplayReport::check(&record, 1e-9);
    assert!(!report.matches);
    assert!(
        report.diffs[0].contains("position off by"),
        "{:?}",
        report.diffs
    );
}

#[test]
fn spec_grid_defaults_to_the_subject_region() {
    let app = App::new(RunConfig::default()).unwrap();
    let scenario = app.resolve_scenario("carrot_on_plate").unwrap();
    let spec = app.collect_spec(&scenario).unwrap();
    assert_eq!(spec.target_count, 25);
    assert_eq!(spec.policies().len(), 25);
}
