use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::f64::consts::FRAC_PI_2;
use core::fmt;

use serde::{Deserialize, Serialize};

use super::{GripperCommand, OrientationRef, ParameterizedActionSequence, PoseField, SymbolicStep};

/// Default vertical approach and retreat offset, metres.
pub const DEFAULT_APPROACH_OFFSET: f64 = 0.10;

/// Height above the target surface at which a dragged object is let go.
pub const DRAG_CLEARANCE: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Skill {
    PickPlace,
    Drag,
    Rotate,
}

impl Skill {
    pub const ALL: [Skill; 3] = [Skill::PickPlace, Skill::Drag, Skill::Rotate];

    pub fn as_str(self) -> &'static str {
        match self {
            Skill::PickPlace => "pick_place",
            Skill::Drag => "drag",
            Skill::Rotate => "rotate",
        }
    }

    pub fn parse(name: &str) -> Option<Skill> {
        Skill::ALL.into_iter().find(|s| s.as_str() == name)
    }

    /// Whether a step may use the synthesized top-down grasp of an object
    /// that had no grasp candidate nearby.
    pub fn allows_fallback_grasp(self) -> bool {
        !matches!(self, Skill::Rotate)
    }
}

impl fmt::Display for Skill {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

fn step(
    object_index: u32,
    field: PoseField,
    dz: f64,
    orientation_ref: OrientationRef,
    gripper: GripperCommand,
    annotation: &str,
) -> SymbolicStep {
    SymbolicStep {
        object_index,
        field,
        offset: [0.0, 0.0, dz],
        orientation_ref,
        yaw: 0.0,
        gripper,
        annotation: annotation.to_string(),
    }
}

/// The reference trajectory for `skill`. Object 1 is the manipulated object,
/// object 2 the destination.
pub fn exemplar(skill: Skill, approach: f64) -> ParameterizedActionSequence {
    use GripperCommand::{Close, Hold, Open};
    use OrientationRef::{Grasp, Keep};
    use PoseField::{Center, Grasp as AtGrasp};

    let grasp_phase = [
        step(1, AtGrasp, approach, Grasp, Open, "move above the {label}"),
        step(1, AtGrasp, 0.0, Keep, Open, "descend to the {label}"),
        step(1, AtGrasp, 0.0, Keep, Close, "grasp the {label}"),
    ];
    let mut steps: Vec<SymbolicStep> = grasp_phase.to_vec();
    match skill {
        Skill::PickPlace => steps.extend([
            step(1, AtGrasp, approach, Keep, Hold, "lift the {label}"),
            step(
                2,
                Center,
                approach,
                Keep,
                Hold,
                "carry it above the {label}",
            ),
            step(
                2,
                Center,
                approach,
                Keep,
                Open,
                "release it over the {label}",
            ),
        ]),
        Skill::Drag => steps.extend([
            step(
                2,
                Center,
                DRAG_CLEARANCE,
                Keep,
                Hold,
                "drag it to the {label}",
            ),
            step(
                2,
                Center,
                DRAG_CLEARANCE,
                Keep,
                Open,
                "let go at the {label}",
            ),
            step(2, Center, approach, Keep, Open, "retreat from the {label}"),
        ]),
        Skill::Rotate => {
            let mut turn = step(1, AtGrasp, 0.0, Keep, Hold, "rotate the {label}");
            turn.yaw = FRAC_PI_2;
            steps.extend([
                turn,
                step(1, AtGrasp, 0.0, Keep, Open, "release the {label}"),
                step(1, AtGrasp, approach, Keep, Open, "retreat from the {label}"),
            ]);
        }
    }
    ParameterizedActionSequence {
        skill_name: skill,
        steps,
    }
}

/// One exemplar per skill, as shown to the action-generation backend.
pub fn exemplar_block(approach: f64) -> String {
    let mut out = String::new();
    for skill in Skill::ALL {
        let json = serde_json::to_string(&exemplar(skill, approach)).unwrap_or_default();
        out.push_str(&format!("{skill}: {json}\n"));
    }
    out.trim_end().to_string()
}

/// Rewrites object indices of a sequence, e.g. to apply an exemplar to the
/// objects of a concrete scene. Indices without a mapping are kept.
pub fn reindex(
    seq: &ParameterizedActionSequence,
    mapping: &[(u32, u32)],
) -> ParameterizedActionSequence {
    let mut out = seq.clone();
    for s in &mut out.steps {
        if let Some((_, to)) = mapping.iter().find(|(from, _)| *from == s.object_index) {
            s.object_index = *to;
        }
    }
    out
}

/// Verbs that select a skill when a sub-task mentions them.
pub fn infer_skill(subtask_text: &str) -> Skill {
    let lower = subtask_text.to_lowercase();
    let has = |words: &[&str]| {
        lower
            .split(|c: char| !c.is_alphanumeric())
            .any(|w| words.contains(&w))
    };
    if has(&["rotate", "rotating", "turn", "turning", "twist"]) {
        Skill::Rotate
    } else if has(&["drag", "dragging", "push", "pushing", "slide", "sliding"]) {
        Skill::Drag
    } else {
        Skill::PickPlace
    }
}
