//! Sub-task to waypoint translation.
//!
//! The language backend never sees raw waypoints of previous runs. It gets the
//! sub-task, a text listing of the perceived objects (centres and grasps) and
//! one exemplar per skill, and answers with a [`ParameterizedActionSequence`]
//! whose poses refer to objects by their index in that listing. Binding the
//! references against object records yields concrete [`WaypointAction`]s.
//! Successful sequences are cached under their sub-task prompt so an identical
//! prompt later skips the backend entirely.

mod cache;
mod skills;

pub use cache::{canonical_prompt, ActionCache, ActionStore, CacheRecord, StoreError};
pub use skills::{
    exemplar, exemplar_block, infer_skill, reindex, Skill, DEFAULT_APPROACH_OFFSET, DRAG_CLEARANCE,
};

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{Gateway, GatewayError, Schema};
use crate::geometry::{self, quat_to_wxyz, top_down, wire, Quat, Vec3};
use crate::perception::ObjectRecord;
use crate::prompts::{self, PromptError, PromptLibrary};
use crate::reasoning::SubTask;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GripperCommand {
    Open,
    Close,
    Hold,
}

/// One executable step: a Cartesian gripper pose in the base frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaypointAction {
    #[serde(with = "wire::vec3")]
    pub position: Vec3,
    #[serde(rename = "quaternion", with = "wire::quat")]
    pub orientation: Quat,
    pub gripper: GripperCommand,
    pub annotation: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionSource {
    Generated,
    Cache,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionSequence {
    pub steps: Vec<WaypointAction>,
    pub source: ActionSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoseField {
    Center,
    Grasp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrientationRef {
    Grasp,
    TopDown,
    /// Orientation of the previous step; on the first step, the referenced
    /// field's own orientation.
    Keep,
}

fn is_zero(v: &f64) -> bool {
    *v == 0.0
}

/// A waypoint expressed relative to an object of the scene listing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymbolicStep {
    /// 1-based position in the object listing.
    pub object_index: u32,
    pub field: PoseField,
    /// Base-frame offset added to the referenced position, metres.
    pub offset: [f64; 3],
    pub orientation_ref: OrientationRef,
    /// Extra rotation about base z applied after `orientation_ref`, radians.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub yaw: f64,
    pub gripper: GripperCommand,
    /// `{label}` is replaced by the referenced object's label.
    pub annotation: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterizedActionSequence {
    #[serde(rename = "skill")]
    pub skill_name: Skill,
    pub steps: Vec<SymbolicStep>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControllerError {
    #[error("no object records to act on")]
    NoObjects,
    #[error("step {step} references object {index} but only {count} are in scope")]
    UnboundIndex {
        step: usize,
        index: u32,
        count: usize,
    },
    #[error(
        "step {step} uses the fallback grasp of object {index}, which {skill} does not permit"
    )]
    InvalidPair {
        step: usize,
        index: u32,
        skill: Skill,
    },
    #[error("sequence has no steps")]
    EmptySequence,
    #[error("sequence closes the gripper before approaching")]
    CloseFirst,
    #[error("step {step} has a non-finite offset or yaw")]
    NonFinite { step: usize },
    #[error("reply does not decode into a sequence: {0}")]
    Decode(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

/// Text-only rendering of the scene objects for the generation prompt.
pub fn render_objects(objects: &[ObjectRecord]) -> String {
    let mut out = String::new();
    for (i, o) in objects.iter().enumerate() {
        let c = o.center;
        let _ = write!(
            out,
            "{}. {} (instance {}): center [{:.4}, {:.4}, {:.4}]; ",
            i + 1,
            o.label,
            o.instance_index,
            c.x,
            c.y,
            c.z
        );
        if o.grasp_fallback {
            out.push_str("grasp: none detected (top-down at center)\n");
        } else {
            let g = o.grasp.position;
            let q = quat_to_wxyz(&o.grasp.orientation);
            let _ = writeln!(
                out,
                "grasp [{:.4}, {:.4}, {:.4}] orientation [{:.4}, {:.4}, {:.4}, {:.4}] score {:.2}",
                g.x, g.y, g.z, q[0], q[1], q[2], q[3], o.grasp.score
            );
        }
    }
    out.trim_end().to_string()
}

/// Rejects sequences the skill constraints rule out, before any binding.
pub fn check_sequence(
    seq: &ParameterizedActionSequence,
    objects: &[ObjectRecord],
) -> Result<(), ControllerError> {
    let first = seq.steps.first().ok_or(ControllerError::EmptySequence)?;
    if first.gripper == GripperCommand::Close {
        return Err(ControllerError::CloseFirst);
    }
    for (i, s) in seq.steps.iter().enumerate() {
        if !(s.offset.iter().all(|v| v.is_finite()) && s.yaw.is_finite()) {
            return Err(ControllerError::NonFinite { step: i });
        }
        let idx = s.object_index as usize;
        if idx == 0 || idx > objects.len() {
            return Err(ControllerError::UnboundIndex {
                step: i,
                index: s.object_index,
                count: objects.len(),
            });
        }
        let uses_grasp = s.field == PoseField::Grasp || s.orientation_ref == OrientationRef::Grasp;
        if uses_grasp && objects[idx - 1].grasp_fallback && !seq.skill_name.allows_fallback_grasp()
        {
            return Err(ControllerError::InvalidPair {
                step: i,
                index: s.object_index,
                skill: seq.skill_name,
            });
        }
    }
    Ok(())
}

/// Resolves every symbolic step against `objects`.
///
/// Positions are the referenced centre or grasp position plus the offset.
/// Orientation follows `orientation_ref`, then `yaw` is applied about base z.
pub fn bind_parameters(
    seq: &ParameterizedActionSequence,
    objects: &[ObjectRecord],
) -> Result<ActionSequence, ControllerError> {
    check_sequence(seq, objects)?;
    let mut steps: Vec<WaypointAction> = Vec::with_capacity(seq.steps.len());
    for s in &seq.steps {
        let obj = &objects[s.object_index as usize - 1];
        let base = match s.field {
            PoseField::Center => obj.center,
            PoseField::Grasp => obj.grasp.position,
        };
        let native = match s.field {
            PoseField::Center => top_down(),
            PoseField::Grasp => obj.grasp.orientation,
        };
        let orientation = match s.orientation_ref {
            OrientationRef::Grasp => obj.grasp.orientation,
            OrientationRef::TopDown => top_down(),
            OrientationRef::Keep => steps.last().map_or(native, |p| p.orientation),
        };
        let orientation = if s.yaw == 0.0 {
            orientation
        } else {
            geometry::yaw(s.yaw) * orientation
        };
        steps.push(WaypointAction {
            position: base + geometry::vec3(s.offset),
            orientation,
            gripper: s.gripper,
            annotation: s.annotation.replace("{label}", &obj.label),
        });
    }
    Ok(ActionSequence {
        steps,
        source: ActionSource::Generated,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControllerConfig {
    pub approach_offset: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            approach_offset: DEFAULT_APPROACH_OFFSET,
        }
    }
}

/// Asks the action backend for a skill-shaped sequence and binds it.
pub fn generate_action_sequence(
    subtask: &SubTask,
    objects: &[ObjectRecord],
    prompts: &PromptLibrary,
    gateway: &Gateway,
    config: &ControllerConfig,
) -> Result<(ActionSequence, ParameterizedActionSequence), ControllerError> {
    if objects.is_empty() {
        return Err(ControllerError::NoObjects);
    }
    let listing = render_objects(objects);
    let exemplars = exemplar_block(config.approach_offset);
    let request = prompts.request(
        prompts::ACTION_GENERATION,
        Schema::Action.id(),
        &[
            ("subtask", &subtask.text),
            ("objects", &listing),
            ("exemplars", &exemplars),
        ],
    )?;
    let response = gateway.complete(&request)?;
    let seq: ParameterizedActionSequence = serde_json::from_value(response.parsed_payload)
        .map_err(|e| ControllerError::Decode(e.to_string()))?;
    let bound = bind_parameters(&seq, objects)?;
    Ok((bound, seq))
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExecutionError {
    #[error("waypoint [{:.3}, {:.3}, {:.3}] is unreachable", .position[0], .position[1], .position[2])]
    ReachFailure { position: [f64; 3] },
    #[error("executor rejected the step: {0}")]
    Rejected(String),
}

/// Result of one executed waypoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StepFeedback {
    /// After a close command: whether an object ended up in the gripper.
    pub grasped: Option<bool>,
}

/// Consumer of waypoint streams (simulator, robot driver).
pub trait Executor {
    fn execute(&mut self, action: &WaypointAction) -> Result<StepFeedback, ExecutionError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub action: WaypointAction,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grasped: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    Perception,
    Transport,
    Generation,
    Binding,
    Reach,
    Execution,
    GraspMissed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<ActionSource>,
    /// Backend invocations made while producing the sequence.
    pub backend_calls: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sequence: Option<ActionSequence>,
    pub steps: Vec<StepOutcome>,
    pub success: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<FailureKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub store_error: Option<String>,
}

impl ExecutionReport {
    /// Report for a sub-task that failed before any action was produced.
    pub fn failed(kind: FailureKind, error: impl Into<String>) -> Self {
        Self {
            source: None,
            backend_calls: 0,
            sequence: None,
            steps: Vec::new(),
            success: false,
            failure: Some(kind),
            error: Some(error.into()),
            store_error: None,
        }
    }

    pub fn reach_failure(&self) -> bool {
        self.failure == Some(FailureKind::Reach)
    }

    /// One-line account for the status evaluator.
    pub fn summary(&self, subtask_text: &str) -> String {
        let executed = self.steps.iter().filter(|s| s.ok).count();
        let total = self.sequence.as_ref().map_or(0, |s| s.steps.len());
        let source = match self.source {
            Some(ActionSource::Cache) => "cached",
            Some(ActionSource::Generated) => "generated",
            None => "no",
        };
        if self.success {
            format!("\"{subtask_text}\" succeeded ({source} sequence, {executed}/{total} steps)")
        } else {
            format!(
                "\"{subtask_text}\" failed ({source} sequence, {executed}/{total} steps): {}",
                self.error.as_deref().unwrap_or("unknown error")
            )
        }
    }
}

fn classify(err: &ControllerError) -> FailureKind {
    match err {
        ControllerError::Gateway(GatewayError::Transport(_)) => FailureKind::Transport,
        ControllerError::Gateway(_) | ControllerError::Decode(_) | ControllerError::Prompt(_) => {
            FailureKind::Generation
        }
        _ => FailureKind::Binding,
    }
}

/// Produces, executes and (on success) caches the sequence for one sub-task.
///
/// A cache hit binds the stored sequence and makes no backend call. A miss
/// generates one; its parameterized form is stored only when every step ran
/// and every close step secured an object. Failures are reported, not raised.
pub fn execute_subtask(
    subtask: &SubTask,
    objects: &[ObjectRecord],
    cache: &mut dyn ActionStore,
    prompts: &PromptLibrary,
    gateway: &Gateway,
    executor: &mut dyn Executor,
    config: &ControllerConfig,
) -> ExecutionReport {
    let calls_before = gateway.call_count();
    let (produced, source) = match cache.lookup(&subtask.text) {
        Some(seq) => (
            bind_parameters(&seq, objects).map(|b| (b, seq)),
            ActionSource::Cache,
        ),
        None => (
            generate_action_sequence(subtask, objects, prompts, gateway, config),
            ActionSource::Generated,
        ),
    };
    let backend_calls = gateway.call_count() - calls_before;
    let (mut bound, param) = match produced {
        Ok(pair) => pair,
        Err(e) => {
            let mut report = ExecutionReport::failed(classify(&e), e.to_string());
            report.source = Some(source);
            report.backend_calls = backend_calls;
            return report;
        }
    };
    bound.source = source;

    let mut steps = Vec::with_capacity(bound.steps.len());
    let mut failure = None;
    let mut error = None;
    for action in &bound.steps {
        match executor.execute(action) {
            Ok(fb) => {
                steps.push(StepOutcome {
                    action: action.clone(),
                    ok: true,
                    grasped: fb.grasped,
                    error: None,
                });
                if fb.grasped == Some(false) && failure.is_none() {
                    failure = Some(FailureKind::GraspMissed);
                    error = Some(format!("nothing grasped at \"{}\"", action.annotation));
                }
            }
            Err(e) => {
                steps.push(StepOutcome {
                    action: action.clone(),
                    ok: false,
                    grasped: None,
                    error: Some(e.to_string()),
                });
                failure = Some(match e {
                    ExecutionError::ReachFailure { .. } => FailureKind::Reach,
                    ExecutionError::Rejected(_) => FailureKind::Execution,
                });
                error = Some(e.to_string());
                break;
            }
        }
    }
    let success = failure.is_none();
    let mut store_error = None;
    if success && source == ActionSource::Generated {
        if let Err(e) = cache.store(&subtask.text, param) {
            store_error = Some(e.to_string());
        }
    }
    ExecutionReport {
        source: Some(source),
        backend_calls,
        sequence: Some(bound),
        steps,
        success,
        failure,
        error,
        store_error,
    }
}
