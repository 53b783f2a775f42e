//! Built-in tabletop scenarios.

use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use super::{GoalKind, GoalSpec, ObjectTemplate, Placement, Scenario, DEFAULT_SUCCESS_THRESHOLD};
use crate::geometry::RigidTransform;
use crate::perception::CameraModel;

/// The four tasks run by the default benchmark, in table order.
pub const BENCHMARK_SCENARIOS: [&str; 4] = [
    "stack_blocks",
    "carrot_on_plate",
    "spoon_on_towel",
    "eggplant_in_basket",
];

const LEFT_MIN: [f64; 2] = [0.2, -0.25];
const LEFT_MAX: [f64; 2] = [0.3, -0.12];
const RIGHT_MIN: [f64; 2] = [0.35, 0.05];
const RIGHT_MAX: [f64; 2] = [0.5, 0.25];

/// Overhead camera 0.9 m above the table, looking straight down.
pub fn sim_camera() -> CameraModel {
    let pose = RigidTransform::from_row_major(
        [0.0, -1.0, 0.0, -1.0, 0.0, 0.0, 0.0, 0.0, -1.0],
        [0.35, 0.0, 0.9],
    )
    .expect("built-in camera rotation is orthonormal");
    CameraModel::new(300.0, 300.0, 160.0, 120.0, 320, 240, pose)
        .expect("built-in intrinsics are valid")
}

fn template(label: &str, placement: Placement, extent: [f64; 3]) -> ObjectTemplate {
    ObjectTemplate {
        label: label.to_string(),
        placement,
        extent,
        graspable: false,
        container: false,
        count: 1,
        support: None,
    }
}

fn graspable(mut t: ObjectTemplate) -> ObjectTemplate {
    t.graspable = true;
    t
}

fn container(mut t: ObjectTemplate) -> ObjectTemplate {
    t.container = true;
    t
}

fn region(min: [f64; 2], max: [f64; 2]) -> Placement {
    Placement::UniformRegion { min, max }
}

fn fixed(x: f64, y: f64) -> Placement {
    Placement::Fixed {
        xy: [x, y],
        yaw: 0.0,
    }
}

fn goal(kind: GoalKind, subject: &str, target: &str) -> GoalSpec {
    GoalSpec {
        kind,
        subject: subject.to_string(),
        target: target.to_string(),
        threshold: DEFAULT_SUCCESS_THRESHOLD,
        metric: Default::default(),
    }
}

fn scenario(
    name: &str,
    task: &str,
    objects: Vec<ObjectTemplate>,
    goals: Vec<GoalSpec>,
) -> Scenario {
    Scenario {
        name: name.to_string(),
        task: task.to_string(),
        objects,
        goals,
        camera: sim_camera(),
    }
}

fn stack_blocks() -> Scenario {
    scenario(
        "stack_blocks",
        "stack the green block on the yellow block",
        vec![
            graspable(template(
                "green block",
                region(LEFT_MIN, LEFT_MAX),
                [0.02, 0.02, 0.02],
            )),
            graspable(template(
                "yellow block",
                region(RIGHT_MIN, RIGHT_MAX),
                [0.02, 0.02, 0.02],
            )),
        ],
        vec![goal(GoalKind::Stacked, "green block", "yellow block")],
    )
}

fn carrot_on_plate() -> Scenario {
    scenario(
        "carrot_on_plate",
        "place the carrot on the plate",
        vec![
            graspable(template(
                "carrot",
                region(LEFT_MIN, LEFT_MAX),
                [0.05, 0.015, 0.015],
            )),
            container(template(
                "plate",
                region(RIGHT_MIN, RIGHT_MAX),
                [0.08, 0.08, 0.01],
            )),
        ],
        vec![goal(GoalKind::OnTarget, "carrot", "plate")],
    )
}

fn spoon_on_towel() -> Scenario {
    scenario(
        "spoon_on_towel",
        "put the spoon on the towel",
        vec![
            graspable(template(
                "spoon",
                region(LEFT_MIN, LEFT_MAX),
                [0.06, 0.012, 0.008],
            )),
            template("towel", region(RIGHT_MIN, RIGHT_MAX), [0.07, 0.07, 0.003]),
        ],
        vec![goal(GoalKind::OnTarget, "spoon", "towel")],
    )
}

/// The sink is a floor slab ringed by four walls; the eggplant starts on the floor.
fn eggplant_in_basket() -> Scenario {
    let mut eggplant = graspable(template(
        "eggplant",
        region([0.27, -0.235], [0.33, -0.165]),
        [0.045, 0.02, 0.02],
    ));
    eggplant.support = Some("sink".to_string());
    let mut long_walls = template(
        "sink wall",
        Placement::Line {
            start: [0.3, -0.27],
            end: [0.3, -0.13],
        },
        [0.1, 0.01, 0.03],
    );
    long_walls.count = 2;
    let mut short_walls = template(
        "sink wall",
        Placement::Line {
            start: [0.21, -0.2],
            end: [0.39, -0.2],
        },
        [0.01, 0.055, 0.03],
    );
    short_walls.count = 2;
    scenario(
        "eggplant_in_basket",
        "put the eggplant in the basket",
        vec![
            container(template("sink", fixed(0.3, -0.2), [0.079, 0.059, 0.01])),
            long_walls,
            short_walls,
            eggplant,
            container(template(
                "basket",
                region(RIGHT_MIN, RIGHT_MAX),
                [0.07, 0.07, 0.03],
            )),
        ],
        vec![goal(GoalKind::InRegion, "eggplant", "basket")],
    )
}

/// Three identical peppers in a row; only the middle one should move.
fn pepper_line() -> Scenario {
    let mut peppers = graspable(template(
        "pepper",
        Placement::Line {
            start: [0.25, -0.3],
            end: [0.25, 0.0],
        },
        [0.025, 0.025, 0.025],
    ));
    peppers.count = 3;
    scenario(
        "pepper_line",
        "put the middle pepper on the plate",
        vec![
            peppers,
            container(template("plate", fixed(0.45, 0.22), [0.08, 0.08, 0.01])),
        ],
        vec![goal(GoalKind::OnTarget, "pepper", "plate")],
    )
}

fn cutlery() -> Scenario {
    scenario(
        "cutlery",
        "put the fork on the plate and the knife on the towel",
        vec![
            graspable(template(
                "fork",
                region([0.2, -0.3], [0.3, -0.22]),
                [0.07, 0.01, 0.006],
            )),
            graspable(template(
                "knife",
                region([0.2, -0.12], [0.3, -0.04]),
                [0.08, 0.01, 0.005],
            )),
            container(template("plate", fixed(0.45, 0.22), [0.08, 0.08, 0.01])),
            template("towel", fixed(0.5, -0.22), [0.07, 0.07, 0.003]),
        ],
        vec![
            goal(GoalKind::OnTarget, "fork", "plate"),
            goal(GoalKind::OnTarget, "knife", "towel"),
        ],
    )
}

pub fn builtin_scenarios() -> Vec<Scenario> {
    vec![
        stack_blocks(),
        carrot_on_plate(),
        spoon_on_towel(),
        eggplant_in_basket(),
        pepper_line(),
        cutlery(),
    ]
}

pub fn builtin_scenario(name: &str) -> Option<Scenario> {
    builtin_scenarios().into_iter().find(|s| s.name == name)
}

pub fn benchmark_scenarios() -> Vec<Scenario> {
    BENCHMARK_SCENARIOS
        .iter()
        .filter_map(|n| builtin_scenario(n))
        .collect()
}
