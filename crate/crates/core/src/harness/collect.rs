use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::bench::round_half_up;
use super::{run_episode, EpisodeContext, FailureReason, TrajectoryStep};
use crate::perception::CameraModel;
use crate::simworld::{
    check_goals, execute_action, grid_positions, mix_seed, reset_scene, GoalSpec, ResetPolicy,
    Scenario, SimError, SimSettings, WorldState,
};

pub const TRAJECTORY_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("trajectory sink failed: {0}")]
pub struct SinkError(pub String);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum StatsError {
    #[error("no episodes to summarize")]
    Empty,
    #[error("{valid} valid episodes out of {total}")]
    Inconsistent { valid: u64, total: u64 },
}

/// A self-contained, replayable episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub format_version: u32,
    pub episode_id: String,
    pub scenario: String,
    pub task_text: String,
    pub seed: u64,
    pub camera: CameraModel,
    /// Success rule the episode was judged by.
    pub goals: Vec<GoalSpec>,
    pub settings: SimSettings,
    pub initial_state: WorldState,
    pub steps: Vec<TrajectoryStep>,
    pub final_state: WorldState,
    pub success: bool,
}

/// Destination of valid trajectories.
pub trait TrajectorySink {
    fn write(&mut self, record: &TrajectoryRecord) -> Result<(), SinkError>;
}

#[derive(Debug, Clone, Default)]
pub struct MemorySink {
    pub records: Vec<TrajectoryRecord>,
}

impl TrajectorySink for MemorySink {
    fn write(&mut self, record: &TrajectoryRecord) -> Result<(), SinkError> {
        self.records.push(record.clone());
        Ok(())
    }
}

/// Success flag and duration of one episode, the input of [`compute_stats`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTally {
    pub success: bool,
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub total: u64,
    pub valid: u64,
    /// `100 * valid / total`, rounded half-up to two decimals.
    pub success_rate: f64,
    pub total_duration: f64,
    pub mean_episode_duration: f64,
    pub interventions: u64,
    /// `total_duration / interventions`; absent without interventions.
    pub mean_time_between_interventions: Option<f64>,
}

pub fn compute_stats(
    results: &[EpisodeTally],
    interventions: u64,
    duration: f64,
) -> Result<DatasetStats, StatsError> {
    if results.is_empty() {
        return Err(StatsError::Empty);
    }
    let total = results.len() as u64;
    let valid = results.iter().filter(|r| r.success).count() as u64;
    Ok(DatasetStats {
        total,
        valid,
        success_rate: round_half_up(100.0 * valid as f64 / total as f64, 2),
        total_duration: duration,
        mean_episode_duration: results.iter().map(|r| r.wall_time).sum::<f64>() / total as f64,
        interventions,
        mean_time_between_interventions: (interventions > 0)
            .then(|| duration / interventions as f64),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ResetMode {
    /// Sweep the manipulated object over a grid covering `min..=max`.
    Grid { min: [f64; 2], max: [f64; 2] },
    /// Re-spawn the whole scene with a fresh seed per position.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollectSpec {
    pub target_count: u32,
    pub reset: ResetMode,
    /// Executions per reset position before it is skipped.
    pub attempts_per_position: u32,
    pub base_seed: u64,
}

impl CollectSpec {
    pub fn grid(target_count: u32, min: [f64; 2], max: [f64; 2]) -> Self {
        Self {
            target_count,
            reset: ResetMode::Grid { min, max },
            attempts_per_position: 3,
            base_seed: 0,
        }
    }

    /// Reset policies in sweep order: a square grid with at least `target_count` cells.
    pub fn policies(&self) -> Vec<ResetPolicy> {
        match &self.reset {
            ResetMode::Grid { min, max } => {
                let n = libm::ceil(libm::sqrt(f64::from(self.target_count))) as u32;
                grid_positions(*min, *max, n, n)
                    .into_iter()
                    .map(|xy| ResetPolicy::RuleBased { xy })
                    .collect()
            }
            ResetMode::Random => (0..self.target_count)
                .map(|_| ResetPolicy::Random)
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionOutcome {
    Valid,
    /// Every attempt failed; the position was logged and skipped.
    Skipped,
    /// A waypoint was unreachable; the scene was restored by hand and the position skipped.
    Intervention,
    ResetFailed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionLog {
    pub index: u32,
    pub policy: ResetPolicy,
    pub attempts: u32,
    pub outcome: PositionOutcome,
    /// Why the last attempt failed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<FailureReason>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollectionOutcome {
    pub stats: Option<DatasetStats>,
    pub positions: Vec<PositionLog>,
    pub episodes: Vec<EpisodeTally>,
}

/// Reset, run, check, re-execute on failure, record when valid.
///
/// Stops when `target_count` valid trajectories are written or the sweep is
/// exhausted. Only a sink failure aborts.
pub fn collect_dataset(
    scenario: &Scenario,
    spec: &CollectSpec,
    ctx: &mut EpisodeContext<'_>,
    sink: &mut dyn TrajectorySink,
) -> Result<CollectionOutcome, SinkError> {
    let start = ctx.clock.now();
    let mut tallies = Vec::new();
    let mut positions = Vec::new();
    let mut interventions = 0u64;
    let mut valid = 0u32;
    for (k, policy) in spec.policies().into_iter().enumerate() {
        if valid >= spec.target_count {
            break;
        }
        let seed = mix_seed(&[spec.base_seed, k as u64]);
        let initial = match reset_scene(scenario, &policy, seed) {
            Ok(w) => w,
            Err(e) => {
                positions.push(PositionLog {
                    index: k as u32,
                    policy,
                    attempts: 0,
                    outcome: PositionOutcome::ResetFailed,
                    reason: None,
                    detail: Some(e.to_string()),
                });
                continue;
            }
        };
        let mut outcome = PositionOutcome::Skipped;
        let mut detail = None;
        let mut reason = None;
        let mut attempts = 0;
        for attempt in 0..spec.attempts_per_position.max(1) {
            attempts += 1;
            let mut world = initial.clone();
            if attempt > 0 {
                world.rng_seed = mix_seed(&[seed, u64::from(attempt)]);
            }
            let result = run_episode(&scenario.task, scenario, world, ctx);
            let ok = result.success
                && check_goals(&result.final_state, &scenario.goals).unwrap_or(false);
            tallies.push(EpisodeTally {
                success: ok,
                wall_time: result.wall_time,
            });
            if result.failure == Some(FailureReason::Reach) {
                interventions += 1;
                outcome = PositionOutcome::Intervention;
                reason = result.failure;
                detail = result.failure_detail;
                break;
            }
            if ok {
                let record = TrajectoryRecord {
                    format_version: TRAJECTORY_FORMAT_VERSION,
                    episode_id: format!("{}-{:04}-{}", scenario.name, k, attempt),
                    scenario: scenario.name.clone(),
                    task_text: scenario.task.clone(),
                    seed: result.seed,
                    camera: scenario.camera.clone(),
                    goals: scenario.goals.clone(),
                    settings: ctx.config.sim.clone(),
                    initial_state: result.initial_state,
                    steps: result.steps,
                    final_state: result.final_state,
                    success: true,
                };
                sink.write(&record)?;
                valid += 1;
                outcome = PositionOutcome::Valid;
                break;
            }
            reason = result.failure;
            detail = result.failure_detail;
        }
        let valid_here = outcome == PositionOutcome::Valid;
        positions.push(PositionLog {
            index: k as u32,
            policy,
            attempts,
            outcome,
            reason: if valid_here { None } else { reason },
            detail: if valid_here { None } else { detail },
        });
    }
    let duration = ctx.clock.now() - start;
    Ok(CollectionOutcome {
        stats: compute_stats(&tallies, interventions, duration).ok(),
        positions,
        episodes: tallies,
    })
}

/// Re-executes the recorded actions from the recorded initial state.
pub fn replay_trajectory(record: &TrajectoryRecord) -> Result<WorldState, SimError> {
    let mut world = record.initial_state.clone();
    for step in &record.steps {
        world = execute_action(&world, &step.action, &record.settings)?;
    }
    Ok(world)
}

/// Human-readable differences between two world states beyond `tolerance` metres.
pub fn compare_states(expected: &WorldState, actual: &WorldState, tolerance: f64) -> Vec<String> {
    let mut diffs = Vec::new();
    if expected.objects.len() != actual.objects.len() {
        diffs.push(format!(
            "object count: expected {}, got {}",
            expected.objects.len(),
            actual.objects.len()
        ));
        return diffs;
    }
    for (i, (e, a)) in expected.objects.iter().zip(&actual.objects).enumerate() {
        if e.label != a.label {
            diffs.push(format!("object {i}: label `{}` vs `{}`", e.label, a.label));
        }
        let d = (e.position - a.position).norm();
        if !(d <= tolerance) {
            diffs.push(format!(
                "object {i} ({}): position off by {d:.6} m (expected [{:.4}, {:.4}, {:.4}], got [{:.4}, {:.4}, {:.4}])",
                e.label, e.position.x, e.position.y, e.position.z, a.position.x, a.position.y, a.position.z
            ));
        }
        let ang = e.orientation.angle_to(&a.orientation);
        if !(ang <= tolerance) {
            diffs.push(format!(
                "object {i} ({}): orientation off by {ang:.6} rad",
                e.label
            ));
        }
    }
    if expected.attached_index() != actual.attached_index() {
        diffs.push(format!(
            "attached: expected {:?}, got {:?}",
            expected.attached_index(),
            actual.attached_index()
        ));
    }
    if expected.gripper_state != actual.gripper_state {
        diffs.push(format!(
            "gripper: expected {:?}, got {:?}",
            expected.gripper_state, actual.gripper_state
        ));
    }
    let g = (expected.gripper.position - actual.gripper.position).norm();
    if !(g <= tolerance) {
        diffs.push(format!("gripper position off by {g:.6} m"));
    }
    diffs
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub episode_id: String,
    pub matches: bool,
    pub diffs: Vec<String>,
}

impl ReplayReport {
    pub fn check(record: &TrajectoryRecord, tolerance: f64) -> Self {
        let diffs = match replay_trajectory(record) {
            Ok(w) => {
                let mut d = compare_states(&record.final_state, &w, tolerance);
                let claimed = record.success;
                let holds = check_goals(&w, &record.goals).unwrap_or(false);
                if claimed != holds {
                    d.push(format!(
                        "success flag {claimed} but goal check gives {holds}"
                    ));
                }
                d
            }
            Err(e) => alloc::vec![format!("replay failed: {e}")],
        };
        Self {
            episode_id: record.episode_id.clone(),
            matches: diffs.is_empty(),
            diffs,
        }
    }
}
