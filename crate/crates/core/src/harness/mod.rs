//! Episode orchestration, benchmarking and automated data collection.

mod bench;
mod collect;

pub use bench::{
    round_half_up, run_benchmark, table_average, BenchmarkReport, BenchmarkSpec, TaskRate,
};
pub use collect::{
    collect_dataset, compare_states, compute_stats, replay_trajectory, CollectSpec,
    CollectionOutcome, DatasetStats, EpisodeTally, MemorySink, PositionLog, PositionOutcome,
    ReplayReport, ResetMode, SinkError, StatsError, TrajectoryRecord, TrajectorySink,
    TRAJECTORY_FORMAT_VERSION,
};

use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::clock::Clock;
use crate::controller::{
    execute_subtask, ActionStore, ControllerConfig, ExecutionError, ExecutionReport, Executor,
    FailureKind, GripperCommand, StepFeedback, WaypointAction,
};
use crate::gateway::{Gateway, GatewayError, ModelBackend, DEFAULT_MAX_RETRIES};
use crate::geometry::{wire, Quat, Vec3};
use crate::oracle::OracleBackend;
use crate::perception::{
    describe_scene, perceive_objects, ObjectRecord, PerceptionAgents, PerceptionConfig,
    PerceptionError, PerceptionWarning, SensorFrame,
};
use crate::prompts::{self, PromptLibrary};
use crate::reasoning::{
    ReasoningError, ReasoningSession, SubTask, SubTaskStatus, Verdict, DEFAULT_LOOP_LIMIT,
};
use crate::simworld::{
    check_goals, execute_action, mix_seed, render_observation, GripperState, NoiseSpec, Scenario,
    SimDetector, SimGraspSource, SimImage, SimSettings, WorldState,
};

pub const DEFAULT_EPISODE_CAP: u32 = 10;
pub const DEFAULT_TIMEOUT_S: f64 = 300.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpisodeConfig {
    /// Failures of one sub-task text tolerated before the planner is stopped.
    pub loop_limit: u32,
    /// Maximum number of sub-tasks per episode.
    pub episode_cap: u32,
    /// Simulated seconds before an episode is abandoned.
    pub timeout_s: f64,
    pub perception: PerceptionConfig,
    pub controller: ControllerConfig,
    pub noise: NoiseSpec,
    pub sim: SimSettings,
    /// Simulated duration of one executed waypoint.
    pub action_seconds: f64,
    /// Simulated duration of one backend call.
    pub model_call_seconds: f64,
    pub scene_prompt: String,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            loop_limit: DEFAULT_LOOP_LIMIT,
            episode_cap: DEFAULT_EPISODE_CAP,
            timeout_s: DEFAULT_TIMEOUT_S,
            perception: PerceptionConfig::default(),
            controller: ControllerConfig::default(),
            noise: NoiseSpec::default(),
            sim: SimSettings::default(),
            action_seconds: 1.0,
            model_call_seconds: 2.0,
            scene_prompt: prompts::SCENE_DESCRIPTION.to_string(),
        }
    }
}

/// One gateway per agent role. Roles may share a gateway.
#[derive(Clone)]
pub struct AgentSet {
    pub scene: Arc<Gateway>,
    pub status: Arc<Gateway>,
    pub plan: Arc<Gateway>,
    pub keywords: Arc<Gateway>,
    pub disambiguate: Arc<Gateway>,
    pub action: Arc<Gateway>,
}

impl AgentSet {
    pub fn uniform(gateway: Arc<Gateway>) -> Self {
        Self {
            scene: gateway.clone(),
            status: gateway.clone(),
            plan: gateway.clone(),
            keywords: gateway.clone(),
            disambiguate: gateway.clone(),
            action: gateway,
        }
    }

    /// Oracle backends for every role, each behind its own gateway.
    pub fn oracle(scenario: &Scenario, approach_offset: f64) -> Self {
        let backend: Arc<dyn ModelBackend> =
            Arc::new(OracleBackend::for_scenario(scenario).with_approach_offset(approach_offset));
        let gw = || Arc::new(Gateway::new(backend.clone(), DEFAULT_MAX_RETRIES));
        Self {
            scene: gw(),
            status: gw(),
            plan: gw(),
            keywords: gw(),
            disambiguate: gw(),
            action: gw(),
        }
    }

    fn all(&self) -> [&Arc<Gateway>; 6] {
        [
            &self.scene,
            &self.status,
            &self.plan,
            &self.keywords,
            &self.disambiguate,
            &self.action,
        ]
    }

    /// Backend invocations over all distinct gateways.
    pub fn call_count(&self) -> u64 {
        let all = self.all();
        all.iter()
            .enumerate()
            .filter(|(i, g)| !all[..*i].iter().any(|h| Arc::ptr_eq(g, h)))
            .map(|(_, g)| g.call_count())
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureReason {
    /// The status agent declared the task complete but the goal check disagrees.
    GoalNotMet,
    /// The status agent declared the task impossible.
    StatusFailed,
    LoopDetected,
    EpisodeCap,
    Timeout,
    Reach,
    Transport,
    /// Any other backend, prompt or planning error.
    Backend,
}

/// Bookkeeping for one planned sub-task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubtaskRecord {
    pub subtask: SubTask,
    #[serde(default)]
    pub objects: Vec<ObjectRecord>,
    #[serde(default)]
    pub warnings: Vec<PerceptionWarning>,
    pub report: ExecutionReport,
}

/// One executed waypoint as recorded in a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub index: u64,
    pub timestamp: f64,
    pub subtask_id: u32,
    /// Silhouette digest of the observation the sub-task was planned on.
    pub observation_digest: String,
    #[serde(with = "wire::vec3")]
    pub gripper_position: Vec3,
    #[serde(with = "wire::quat")]
    pub gripper_orientation: Quat,
    /// Gripper state after the step.
    pub gripper_state: GripperState,
    pub action: WaypointAction,
    pub annotation: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub task_text: String,
    pub scenario: String,
    pub seed: u64,
    pub success: bool,
    pub final_verdict: Option<Verdict>,
    pub failure: Option<FailureReason>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure_detail: Option<String>,
    pub subtask_transcript: Vec<SubtaskRecord>,
    pub backend_call_count: u64,
    /// Calls made by the action-generation role alone.
    pub action_call_count: u64,
    pub cache_hits: u64,
    /// Simulated seconds from start to finish.
    pub wall_time: f64,
    pub detector_queries: Vec<String>,
    pub initial_state: WorldState,
    pub final_state: WorldState,
    pub steps: Vec<TrajectoryStep>,
}

/// Shared resources for running episodes.
pub struct EpisodeContext<'a> {
    pub agents: &'a AgentSet,
    pub prompts: &'a PromptLibrary,
    pub cache: &'a mut dyn ActionStore,
    pub clock: &'a dyn Clock,
    pub config: &'a EpisodeConfig,
}

/// Simulator executor that also records trajectory steps and charges simulated time.
struct RecordingExecutor<'a> {
    world: &'a mut WorldState,
    settings: &'a SimSettings,
    clock: &'a dyn Clock,
    action_seconds: f64,
    subtask_id: u32,
    digest: &'a str,
    steps: &'a mut Vec<TrajectoryStep>,
}

impl Executor for RecordingExecutor<'_> {
    fn execute(&mut self, action: &WaypointAction) -> Result<StepFeedback, ExecutionError> {
        self.clock.advance(self.action_seconds);
        let next = execute_action(self.world, action, self.settings)?;
        *self.world = next;
        self.steps.push(TrajectoryStep {
            index: self.steps.len() as u64,
            timestamp: self.clock.now(),
            subtask_id: self.subtask_id,
            observation_digest: self.digest.to_string(),
            gripper_position: self.world.gripper.position,
            gripper_orientation: self.world.gripper.orientation,
            gripper_state: self.world.gripper_state,
            action: action.clone(),
            annotation: action.annotation.clone(),
        });
        Ok(StepFeedback {
            grasped: (action.gripper == GripperCommand::Close)
                .then(|| self.world.attached.is_some()),
        })
    }
}

fn is_transport(e: &GatewayError) -> bool {
    matches!(e, GatewayError::Transport(_))
}

fn reasoning_failure(e: &ReasoningError) -> FailureReason {
    match e {
        ReasoningError::LoopDetected { .. } => FailureReason::LoopDetected,
        ReasoningError::Gateway(g) if is_transport(g) => FailureReason::Transport,
        _ => FailureReason::Backend,
    }
}

/// Runs the perceive, reason, act loop on `initial` until a terminal verdict,
/// loop-guard rejection, sub-task cap, timeout or unreachable waypoint.
///
/// Nothing escapes as an error; every failure is encoded in the result.
pub fn run_episode(
    task_text: &str,
    scenario: &Scenario,
    initial: WorldState,
    ctx: &mut EpisodeContext<'_>,
) -> EpisodeResult {
    let cfg = ctx.config;
    let agents = ctx.agents;
    let cam = &scenario.camera;
    let start = ctx.clock.now();
    let calls_start = agents.call_count();
    let action_calls_start = agents.action.call_count();
    let hits_start = ctx.cache.hit_count();
    let mut charged = calls_start;

    let mut session = ReasoningSession::new(cfg.loop_limit.max(1));
    let mut world = initial.clone();
    let mut transcript: Vec<SubtaskRecord> = Vec::new();
    let mut steps: Vec<TrajectoryStep> = Vec::new();
    let mut detector = SimDetector::new(cam.clone(), cfg.noise, world.clone());
    let mut grasps = SimGraspSource {
        world: world.clone(),
    };
    let mut last_report = String::new();
    let mut failure: Option<(FailureReason, String)> = None;
    let mut success = false;

    // Backend calls cost simulated time.
    let charge = |charged: &mut u64| {
        let now = agents.call_count();
        ctx.clock
            .advance((now - *charged) as f64 * cfg.model_call_seconds);
        *charged = now;
    };

    loop {
        if ctx.clock.now() - start >= cfg.timeout_s {
            session.abort();
            failure = Some((FailureReason::Timeout, "episode timeout".to_string()));
            break;
        }
        let mut obs = render_observation(&world, cam);
        obs.add_depth_holes(
            cfg.noise.depth_hole_prob,
            mix_seed(&[world.rng_seed, world.step_count, 0xDEB7]),
        );
        let image = SimImage::new(&world, &obs);
        let digest = image.frame.silhouette_digest.clone();
        let attachment = crate::perception::MarkableImage::attachment(&image);

        let scene = describe_scene(
            &attachment,
            task_text,
            &cfg.scene_prompt,
            ctx.prompts,
            &agents.scene,
        );
        charge(&mut charged);
        let scene = match scene {
            Ok(s) => s,
            Err(e) => {
                let reason = match &e {
                    PerceptionError::Gateway(g) if is_transport(g) => FailureReason::Transport,
                    _ => FailureReason::Backend,
                };
                session.abort();
                failure = Some((reason, e.to_string()));
                break;
            }
        };

        let decision =
            session.evaluate(&scene, task_text, &last_report, ctx.prompts, &agents.status);
        charge(&mut charged);
        match decision {
            Ok(d) => match d.verdict {
                Verdict::TaskComplete => {
                    success = check_goals(&world, &scenario.goals).unwrap_or(false);
                    if !success {
                        failure = Some((FailureReason::GoalNotMet, d.rationale_text));
                    }
                    break;
                }
                Verdict::TaskFailed => {
                    failure = Some((FailureReason::StatusFailed, d.rationale_text));
                    break;
                }
                Verdict::Proceed => {}
            },
            Err(e) => {
                session.abort();
                failure = Some((reasoning_failure(&e), e.to_string()));
                break;
            }
        }

        if transcript.len() as u32 >= cfg.episode_cap {
            session.abort();
            failure = Some((
                FailureReason::EpisodeCap,
                "sub-task cap reached".to_string(),
            ));
            break;
        }

        let planned = session.plan(
            &scene,
            task_text,
            ctx.prompts,
            &agents.plan,
            &agents.keywords,
        );
        charge(&mut charged);
        let subtask = match planned {
            Ok(s) => s,
            Err(e) => {
                session.abort();
                failure = Some((reasoning_failure(&e), e.to_string()));
                break;
            }
        };

        detector.world = world.clone();
        grasps.world = world.clone();
        let frame = SensorFrame {
            image: &image,
            depth: &obs.depth,
        };
        let perceived = perceive_objects(
            &frame,
            &subtask.keywords,
            cam,
            PerceptionAgents {
                detector: &mut detector,
                grasp_source: &mut grasps,
                disambiguator: &agents.disambiguate,
                prompts: ctx.prompts,
            },
            &subtask.descriptors,
            &cfg.perception,
        );
        charge(&mut charged);
        let (objects, warnings, report) = match perceived {
            Ok(out) => {
                let mut exec = RecordingExecutor {
                    world: &mut world,
                    settings: &cfg.sim,
                    clock: ctx.clock,
                    action_seconds: cfg.action_seconds,
                    subtask_id: subtask.id,
                    digest: &digest,
                    steps: &mut steps,
                };
                let report = execute_subtask(
                    &subtask,
                    &out.records,
                    ctx.cache,
                    ctx.prompts,
                    &agents.action,
                    &mut exec,
                    &cfg.controller,
                );
                charge(&mut charged);
                (out.records, out.warnings, report)
            }
            Err(PerceptionError::Gateway(g)) if is_transport(&g) => {
                session.abort();
                failure = Some((FailureReason::Transport, g.to_string()));
                break;
            }
            Err(e) => (
                Vec::new(),
                Vec::new(),
                ExecutionReport::failed(FailureKind::Perception, e.to_string()),
            ),
        };

        let outcome = if report.success {
            SubTaskStatus::Succeeded
        } else {
            SubTaskStatus::Failed
        };
        last_report = report.summary(&subtask.text);
        let note = report.error.clone().unwrap_or_default();
        let reach = report.reach_failure();
        let transport = report.failure == Some(FailureKind::Transport);
        let mut subtask = subtask;
        subtask.status = outcome;
        let _ = session.record(&subtask, outcome, note);
        transcript.push(SubtaskRecord {
            subtask,
            objects,
            warnings,
            report,
        });
        if reach || transport {
            session.abort();
            let reason = if reach {
                FailureReason::Reach
            } else {
                FailureReason::Transport
            };
            failure = Some((reason, last_report.clone()));
            break;
        }
    }

    let (failure, failure_detail) = match failure {
        Some((r, d)) => (Some(r), Some(d)),
        None => (None, None),
    };
    EpisodeResult {
        task_text: task_text.to_string(),
        scenario: scenario.name.clone(),
        seed: initial.rng_seed,
        success,
        final_verdict: session.terminal(),
        failure,
        failure_detail,
        subtask_transcript: transcript,
        backend_call_count: agents.call_count() - calls_start,
        action_call_count: agents.action.call_count() - action_calls_start,
        cache_hits: ctx.cache.hit_count() - hits_start,
        wall_time: ctx.clock.now() - start,
        detector_queries: detector.queries().to_vec(),
        initial_state: initial,
        final_state: world,
        steps,
    }
}

#[cfg(test)]
mod tests;
