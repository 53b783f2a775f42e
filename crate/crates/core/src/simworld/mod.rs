//! Deterministic 2.5D tabletop simulator.
//!
//! Objects are oriented boxes resting on the table (z = 0) or on each other.
//! The gripper teleports between waypoints; closing near an object's top
//! attaches it rigidly, opening drops it onto the highest surface below.
//! There are no dynamics: the same scenario, seed and action list always give
//! the same final state, bit for bit.

mod render;
mod scenarios;

pub use render::{
    oracle_detect, oracle_grasps, render_observation, NoiseSpec, Observation, SimDetector,
    SimFrame, SimGraspSource, SimImage, SIMFRAME_MEDIA_TYPE,
};
pub use scenarios::{
    benchmark_scenarios, builtin_scenario, builtin_scenarios, sim_camera, BENCHMARK_SCENARIOS,
};

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

use crate::controller::{ExecutionError, Executor, GripperCommand, StepFeedback, WaypointAction};
use crate::geometry::{horizontal_distance, top_down, wire, Quat, Vec3};
use crate::perception::CameraModel;
use crate::text::normalize_label;

/// Distance from a graspable object's top centre within which closing attaches it.
pub const ATTACH_RADIUS: f64 = 0.03;

/// Rejection-sampling budget per placed object.
pub const MAX_PLACEMENT_ATTEMPTS: u32 = 1000;

/// Default success distance, metres.
pub const DEFAULT_SUCCESS_THRESHOLD: f64 = 0.15;

/// Allowed gap between a stacked object's bottom and its target's top.
pub const STACK_TOLERANCE: f64 = 0.01;

const SUPPORT_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("could not place `{label}` without overlap after {attempts} attempt(s)")]
    PlacementFailure { label: String, attempts: u32 },
    #[error("waypoint [{:.3}, {:.3}, {:.3}] is unreachable", .position[0], .position[1], .position[2])]
    ReachFailure { position: [f64; 3] },
    #[error("no object labelled `{0}`")]
    MissingObject(String),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
}

impl From<SimError> for ExecutionError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::ReachFailure { position } => ExecutionError::ReachFailure { position },
            other => ExecutionError::Rejected(other.to_string()),
        }
    }
}

/// Axis-aligned rectangle in the table plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Footprint {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Footprint {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.min[0] && x <= self.max[0] && y >= self.min[1] && y <= self.max[1]
    }

    /// True when the rectangles are separated by a positive gap.
    pub fn separated(&self, other: &Footprint) -> bool {
        self.max[0] < other.min[0]
            || other.max[0] < self.min[0]
            || self.max[1] < other.min[1]
            || other.max[1] < self.min[1]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimObject {
    pub label: String,
    /// Box centre in the base frame.
    #[serde(with = "wire::vec3")]
    pub position: Vec3,
    #[serde(with = "wire::quat")]
    pub orientation: Quat,
    /// Half-sizes along the box axes.
    #[serde(with = "wire::vec3")]
    pub extent: Vec3,
    pub graspable: bool,
    pub container: bool,
}

impl SimObject {
    /// Half of the vertical extent of the rotated box.
    pub fn half_height(&self) -> f64 {
        let r = self.orientation.to_rotation_matrix();
        (0..3).map(|k| libm::fabs(r[(2, k)]) * self.extent[k]).sum()
    }

    pub fn top(&self) -> f64 {
        self.position.z + self.half_height()
    }

    pub fn bottom(&self) -> f64 {
        self.position.z - self.half_height()
    }

    pub fn top_center(&self) -> Vec3 {
        Vec3::new(self.position.x, self.position.y, self.top())
    }

    /// Axis-aligned bound of the rotated box in the table plane.
    pub fn footprint(&self) -> Footprint {
        let r = self.orientation.to_rotation_matrix();
        let half = |row: usize| {
            (0..3)
                .map(|k| libm::fabs(r[(row, k)]) * self.extent[k])
                .sum::<f64>()
        };
        let (hx, hy) = (half(0), half(1));
        Footprint {
            min: [self.position.x - hx, self.position.y - hy],
            max: [self.position.x + hx, self.position.y + hy],
        }
    }

    /// Rotation about base z, radians.
    pub fn yaw(&self) -> f64 {
        self.orientation.euler_angles().2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GripperState {
    Open,
    Closed,
}

/// Rigid grip: the object's pose expressed in the gripper frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attachment {
    pub index: usize,
    #[serde(with = "wire::vec3")]
    pub relative_position: Vec3,
    #[serde(with = "wire::quat")]
    pub relative_orientation: Quat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GripperPose {
    #[serde(with = "wire::vec3")]
    pub position: Vec3,
    #[serde(with = "wire::quat")]
    pub orientation: Quat,
}

impl GripperPose {
    pub fn home() -> Self {
        Self {
            position: Vec3::new(0.3, 0.0, 0.4),
            orientation: top_down(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub objects: Vec<SimObject>,
    pub gripper: GripperPose,
    pub gripper_state: GripperState,
    #[serde(default)]
    pub attached: Option<Attachment>,
    pub rng_seed: u64,
    pub step_count: u64,
}

impl WorldState {
    pub fn new(objects: Vec<SimObject>, rng_seed: u64) -> Self {
        Self {
            objects,
            gripper: GripperPose::home(),
            gripper_state: GripperState::Open,
            attached: None,
            rng_seed,
            step_count: 0,
        }
    }

    pub fn attached_index(&self) -> Option<usize> {
        self.attached.as_ref().map(|a| a.index)
    }

    /// Indices of objects carrying `label` (normalized comparison).
    pub fn find(&self, label: &str) -> Vec<usize> {
        let label = normalize_label(label);
        self.objects
            .iter()
            .enumerate()
            .filter(|(_, o)| normalize_label(&o.label) == label)
            .map(|(i, _)| i)
            .collect()
    }

    /// Distinct normalized labels in object order.
    pub fn labels(&self) -> Vec<String> {
        crate::text::dedup_labels(self.objects.iter().map(|o| o.label.as_str()))
    }
}

/// Axis-aligned box the arm cannot reach into.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Region {
    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|k| p[k] >= self.min[k] && p[k] <= self.max[k])
    }

    /// Column of the given horizontal half-size around `xy`, from the table up to `height`.
    pub fn column(xy: [f64; 2], half: f64, height: f64) -> Self {
        Self {
            min: [xy[0] - half, xy[1] - half, 0.0],
            max: [xy[0] + half, xy[1] + half, height],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum Placement {
    Fixed {
        xy: [f64; 2],
        #[serde(default)]
        yaw: f64,
    },
    UniformRegion {
        min: [f64; 2],
        max: [f64; 2],
    },
    /// `count` instances evenly spaced from `start` to `end`, both inclusive.
    Line {
        start: [f64; 2],
        end: [f64; 2],
    },
}

fn one() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectTemplate {
    pub label: String,
    pub placement: Placement,
    pub extent: [f64; 3],
    #[serde(default)]
    pub graspable: bool,
    #[serde(default)]
    pub container: bool,
    #[serde(default = "one")]
    pub count: u32,
    /// Label of an earlier object this one rests on; the table otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub support: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoalKind {
    OnTarget,
    Stacked,
    InRegion,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMetric {
    #[default]
    Horizontal,
    Euclidean,
}

fn default_threshold() -> f64 {
    DEFAULT_SUCCESS_THRESHOLD
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalSpec {
    pub kind: GoalKind,
    pub subject: String,
    pub target: String,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default)]
    pub metric: DistanceMetric,
}

fn one_or_many<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<GoalSpec>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        One(GoalSpec),
        Many(Vec<GoalSpec>),
    }
    Ok(match OneOrMany::deserialize(d)? {
        OneOrMany::One(g) => alloc::vec![g],
        OneOrMany::Many(v) => v,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    /// Instruction given to the agent.
    pub task: String,
    pub objects: Vec<ObjectTemplate>,
    /// One goal or a list; all must hold.
    #[serde(rename = "goal", deserialize_with = "one_or_many")]
    pub goals: Vec<GoalSpec>,
    pub camera: CameraModel,
}

impl Scenario {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidScenario(format!("{}: {m}", self.name)));
        if self.goals.is_empty() {
            return bad("no goal".to_string());
        }
        let mut seen: Vec<String> = Vec::new();
        for t in &self.objects {
            if !t.extent.iter().all(|e| *e > 0.0 && e.is_finite()) {
                return bad(format!("`{}` has a non-positive extent", t.label));
            }
            if t.count == 0 {
                return bad(format!("`{}` has count 0", t.label));
            }
            if let Some(s) = &t.support {
                if !seen.contains(&normalize_label(s)) {
                    return bad(format!(
                        "support `{s}` of `{}` is not defined before it",
                        t.label
                    ));
                }
            }
            seen.push(normalize_label(&t.label));
        }
        for g in &self.goals {
            if !(g.threshold > 0.0) {
                return bad("goal threshold must be positive".to_string());
            }
            for l in [&g.subject, &g.target] {
                if !seen.contains(&normalize_label(l)) {
                    return bad(format!("goal label `{l}` is not among the objects"));
                }
            }
        }
        Ok(())
    }

    pub fn labels(&self) -> Vec<String> {
        crate::text::dedup_labels(self.objects.iter().map(|t| t.label.as_str()))
    }
}

fn make_object(t: &ObjectTemplate, x: f64, y: f64, yaw: f64, support_top: f64) -> SimObject {
    let orientation = crate::geometry::yaw(yaw);
    let mut o = SimObject {
        label: t.label.clone(),
        position: Vec3::new(x, y, 0.0),
        orientation,
        extent: crate::geometry::vec3(t.extent),
        graspable: t.graspable,
        container: t.container,
    };
    o.position.z = support_top + o.half_height();
    o
}

fn fits(candidate: &SimObject, placed: &[SimObject], support: Option<usize>) -> bool {
    let fp = candidate.footprint();
    if let Some(s) = support {
        if !placed[s]
            .footprint()
            .contains(candidate.position.x, candidate.position.y)
        {
            return false;
        }
    }
    placed
        .iter()
        .enumerate()
        .all(|(i, o)| Some(i) == support || fp.separated(&o.footprint()))
}

fn support_index(t: &ObjectTemplate, placed: &[SimObject]) -> Option<usize> {
    let s = normalize_label(t.support.as_deref()?);
    placed.iter().position(|o| normalize_label(&o.label) == s)
}

/// Places every template instance according to its rule, deterministically from `seed`.
pub fn spawn_scene(scenario: &Scenario, seed: u64) -> Result<WorldState, SimError> {
    scenario.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut placed: Vec<SimObject> = Vec::new();
    for t in &scenario.objects {
        let support = support_index(t, &placed);
        let support_top = support.map_or(0.0, |s| placed[s].top());
        for k in 0..t.count {
            let obj = match &t.placement {
                Placement::Fixed { xy, yaw } => {
                    let o = make_object(t, xy[0], xy[1], *yaw, support_top);
                    if !fits(&o, &placed, support) {
                        return Err(SimError::PlacementFailure {
                            label: t.label.clone(),
                            attempts: 1,
                        });
                    }
                    o
                }
                Placement::Line { start, end } => {
                    let f = if t.count == 1 {
                        0.0
                    } else {
                        f64::from(k) / f64::from(t.count - 1)
                    };
                    let x = start[0] + (end[0] - start[0]) * f;
                    let y = start[1] + (end[1] - start[1]) * f;
                    let o = make_object(t, x, y, 0.0, support_top);
                    if !fits(&o, &placed, support) {
                        return Err(SimError::PlacementFailure {
                            label: t.label.clone(),
                            attempts: 1,
                        });
                    }
                    o
                }
                Placement::UniformRegion { min, max } => {
                    let mut found = None;
                    for _ in 0..MAX_PLACEMENT_ATTEMPTS {
                        let x = min[0] + (max[0] - min[0]) * rng.random::<f64>();
                        let y = min[1] + (max[1] - min[1]) * rng.random::<f64>();
                        let o = make_object(t, x, y, 0.0, support_top);
                        if fits(&o, &placed, support) {
                            found = Some(o);
                            break;
                        }
                    }
                    found.ok_or_else(|| SimError::PlacementFailure {
                        label: t.label.clone(),
                        attempts: MAX_PLACEMENT_ATTEMPTS,
                    })?
                }
            };
            placed.push(obj);
        }
    }
    Ok(WorldState::new(placed, seed))
}

/// Simulator knobs that are not part of the scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSettings {
    #[serde(default)]
    pub unreachable: Vec<Region>,
    #[serde(default = "default_attach")]
    pub attach_radius: f64,
}

fn default_attach() -> f64 {
    ATTACH_RADIUS
}

impl Default for SimSettings {
    fn default() -> Self {
        Self {
            unreachable: Vec::new(),
            attach_radius: ATTACH_RADIUS,
        }
    }
}

/// Surface height under `(x, y)` for a released object, ignoring `skip`.
fn support_height(objects: &[SimObject], skip: usize, x: f64, y: f64, bottom: f64) -> f64 {
    objects
        .iter()
        .enumerate()
        .filter(|(i, o)| {
            *i != skip && o.footprint().contains(x, y) && o.top() <= bottom + SUPPORT_EPS
        })
        .map(|(_, o)| o.top())
        .fold(0.0, f64::max)
}

/// Applies one waypoint. The input world is left untouched.
pub fn execute_action(
    world: &WorldState,
    action: &WaypointAction,
    settings: &SimSettings,
) -> Result<WorldState, SimError> {
    if settings
        .unreachable
        .iter()
        .any(|r| r.contains(&action.position))
    {
        return Err(SimError::ReachFailure {
            position: crate::geometry::to_array(&action.position),
        });
    }
    let mut w = world.clone();
    w.gripper = GripperPose {
        position: action.position,
        orientation: action.orientation,
    };
    if let Some(a) = &w.attached {
        let o = &mut w.objects[a.index];
        o.position = action.position + action.orientation * a.relative_position;
        o.orientation = action.orientation * a.relative_orientation;
    }
    match action.gripper {
        GripperCommand::Hold => {}
        GripperCommand::Close => {
            w.gripper_state = GripperState::Closed;
            if w.attached.is_none() {
                let nearest = w
                    .objects
                    .iter()
                    .enumerate()
                    .filter(|(_, o)| o.graspable)
                    .map(|(i, o)| (i, (o.top_center() - action.position).norm()))
                    .filter(|(_, d)| *d <= settings.attach_radius)
                    .min_by(|a, b| a.1.total_cmp(&b.1));
                if let Some((i, _)) = nearest {
                    let inv = action.orientation.inverse();
                    let o = &w.objects[i];
                    w.attached = Some(Attachment {
                        index: i,
                        relative_position: inv * (o.position - action.position),
                        relative_orientation: inv * o.orientation,
                    });
                }
            }
        }
        GripperCommand::Open => {
            w.gripper_state = GripperState::Open;
            if let Some(a) = w.attached.take() {
                let o = &w.objects[a.index];
                let surface =
                    support_height(&w.objects, a.index, o.position.x, o.position.y, o.bottom());
                let hh = o.half_height();
                w.objects[a.index].position.z = surface + hh;
            }
        }
    }
    w.step_count += 1;
    Ok(w)
}

fn distance(a: &SimObject, b: &SimObject, metric: DistanceMetric) -> f64 {
    match metric {
        DistanceMetric::Horizontal => horizontal_distance(&a.position, &b.position),
        DistanceMetric::Euclidean => (a.position - b.position).norm(),
    }
}

/// Goal predicate over explicit object poses.
///
/// Any instance of the subject label may satisfy it against any instance of
/// the target label. Distances compare strictly below the threshold.
pub fn goal_satisfied(
    objects: &[SimObject],
    attached: Option<usize>,
    goal: &GoalSpec,
) -> Result<bool, SimError> {
    let idx = |label: &str| -> Result<Vec<usize>, SimError> {
        let l = normalize_label(label);
        let v: Vec<usize> = (0..objects.len())
            .filter(|i| normalize_label(&objects[*i].label) == l)
            .collect();
        if v.is_empty() {
            Err(SimError::MissingObject(label.to_string()))
        } else {
            Ok(v)
        }
    };
    let subjects = idx(&goal.subject)?;
    let targets = idx(&goal.target)?;
    Ok(subjects.iter().any(|&s| {
        Some(s) != attached
            && targets.iter().any(|&t| {
                let (a, b) = (&objects[s], &objects[t]);
                if s == t || !(distance(a, b, goal.metric) < goal.threshold) {
                    return false;
                }
                match goal.kind {
                    GoalKind::OnTarget => true,
                    GoalKind::Stacked => libm::fabs(a.bottom() - b.top()) <= STACK_TOLERANCE,
                    GoalKind::InRegion => b.footprint().contains(a.position.x, a.position.y),
                }
            })
    }))
}

pub fn check_success(world: &WorldState, goal: &GoalSpec) -> Result<bool, SimError> {
    goal_satisfied(&world.objects, world.attached_index(), goal)
}

/// All goals of a scenario hold.
pub fn check_goals(world: &WorldState, goals: &[GoalSpec]) -> Result<bool, SimError> {
    for g in goals {
        if !check_success(world, g)? {
            return Ok(false);
        }
    }
    Ok(true)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum ResetPolicy {
    Random,
    /// Put the first goal's subject at `xy`, everything else as spawned.
    RuleBased {
        xy: [f64; 2],
    },
}

/// Restores a scene for the next collection episode.
pub fn reset_scene(
    scenario: &Scenario,
    policy: &ResetPolicy,
    seed: u64,
) -> Result<WorldState, SimError> {
    let mut world = spawn_scene(scenario, seed)?;
    if let ResetPolicy::RuleBased { xy } = policy {
        let subject = &scenario.goals[0].subject;
        let i = *world
            .find(subject)
            .first()
            .ok_or_else(|| SimError::MissingObject(subject.clone()))?;
        let template = scenario
            .objects
            .iter()
            .find(|t| normalize_label(&t.label) == normalize_label(subject))
            .ok_or_else(|| SimError::MissingObject(subject.clone()))?;
        let others: Vec<SimObject> = world
            .objects
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(_, o)| o.clone())
            .collect();
        let support = support_index(template, &others);
        let support_top = support.map_or(0.0, |s| others[s].top());
        let yaw = world.objects[i].yaw();
        let moved = make_object(template, xy[0], xy[1], yaw, support_top);
        if !fits(&moved, &others, support) {
            return Err(SimError::PlacementFailure {
                label: subject.clone(),
                attempts: 1,
            });
        }
        world.objects[i] = moved;
    }
    Ok(world)
}

/// Row-major grid of `nx * ny` points spanning `min..=max`.
pub fn grid_positions(min: [f64; 2], max: [f64; 2], nx: u32, ny: u32) -> Vec<[f64; 2]> {
    let lin = |a: f64, b: f64, n: u32, k: u32| {
        if n <= 1 {
            (a + b) / 2.0
        } else {
            a + (b - a) * f64::from(k) / f64::from(n - 1)
        }
    };
    let mut out = Vec::with_capacity((nx * ny) as usize);
    for j in 0..ny {
        for i in 0..nx {
            out.push([lin(min[0], max[0], nx, i), lin(min[1], max[1], ny, j)]);
        }
    }
    out
}

/// Executes waypoints against a world owned by the caller.
pub struct SimExecutor<'a> {
    pub world: &'a mut WorldState,
    pub settings: &'a SimSettings,
    /// Every applied action in order.
    pub log: Vec<WaypointAction>,
}

impl<'a> SimExecutor<'a> {
    pub fn new(world: &'a mut WorldState, settings: &'a SimSettings) -> Self {
        Self {
            world,
            settings,
            log: Vec::new(),
        }
    }
}

impl Executor for SimExecutor<'_> {
    fn execute(&mut self, action: &WaypointAction) -> Result<StepFeedback, ExecutionError> {
        let next = execute_action(self.world, action, self.settings)?;
        *self.world = next;
        self.log.push(action.clone());
        Ok(StepFeedback {
            grasped: (action.gripper == GripperCommand::Close)
                .then(|| self.world.attached.is_some()),
        })
    }
}

/// SplitMix64 finalizer; folds several integers into one well-mixed seed.
pub fn mix_seed(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x9E37_79B9_7F4A_7C15;
    for p in parts {
        h ^= *p;
        h = h.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = h;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h = z ^ (z >> 31);
    }
    h
}
