//! Ground-truth model backend for offline runs.
//!
//! Answers every request schema from the request alone: the attached
//! simulator frame for vision requests, the prompt sections for text ones.
//! It knows the scenario's goals and label vocabulary, nothing else, so the
//! rest of the pipeline (detection, lifting, grasp matching, binding,
//! execution) is exercised for real.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde_json::{json, Value};

use crate::controller::{exemplar, infer_skill, reindex, Skill, DEFAULT_APPROACH_OFFSET};
use crate::gateway::{GatewayError, ModelBackend, ModelRequest, Schema};
use crate::prompts::sections;
use crate::simworld::{goal_satisfied, GoalKind, GoalSpec, Scenario, SimFrame};
use crate::text::{dedup_labels, normalize_label};

const POSITIONAL: [&str; 3] = ["left", "middle", "right"];
const ORDINALS: [&str; 5] = ["first", "second", "third", "fourth", "fifth"];

#[derive(Debug, Clone, PartialEq)]
pub struct OracleBackend {
    goals: Vec<GoalSpec>,
    vocabulary: Vec<String>,
    approach_offset: f64,
}

impl OracleBackend {
    pub fn new(goals: Vec<GoalSpec>, vocabulary: Vec<String>) -> Self {
        Self {
            goals,
            vocabulary: dedup_labels(vocabulary.iter().map(String::as_str)),
            approach_offset: DEFAULT_APPROACH_OFFSET,
        }
    }

    pub fn for_scenario(scenario: &Scenario) -> Self {
        Self::new(scenario.goals.clone(), scenario.labels())
    }

    pub fn with_approach_offset(mut self, offset: f64) -> Self {
        self.approach_offset = offset;
        self
    }

    /// Vocabulary labels in order of first mention; longer labels win overlaps.
    pub fn labels_in(&self, text: &str) -> Vec<String> {
        let text = normalize_label(text);
        let bytes = text.as_bytes();
        let mut found: Vec<(usize, usize, String)> = Vec::new();
        for label in &self.vocabulary {
            let mut from = 0;
            while let Some(off) = text[from..].find(label.as_str()) {
                let start = from + off;
                let end = start + label.len();
                let bounded = (start == 0 || !bytes[start - 1].is_ascii_alphanumeric())
                    && (end == bytes.len() || !bytes[end].is_ascii_alphanumeric());
                if bounded {
                    found.push((start, end, label.clone()));
                }
                from = end;
            }
        }
        found.sort_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)));
        let mut out: Vec<String> = Vec::new();
        let mut covered = 0;
        for (start, end, label) in found {
            if start < covered {
                continue;
            }
            covered = end;
            if !out.contains(&label) {
                out.push(label);
            }
        }
        out
    }

    fn positive(goal: &GoalSpec) -> String {
        let rel = match goal.kind {
            GoalKind::OnTarget => "is on",
            GoalKind::Stacked => "is stacked on",
            GoalKind::InRegion => "is in",
        };
        format!(
            "the {} {rel} the {}",
            normalize_label(&goal.subject),
            normalize_label(&goal.target)
        )
    }

    fn negative(goal: &GoalSpec) -> String {
        let rel = match goal.kind {
            GoalKind::OnTarget => "is not on",
            GoalKind::Stacked => "is not stacked on",
            GoalKind::InRegion => "is not in",
        };
        format!(
            "the {} {rel} the {}",
            normalize_label(&goal.subject),
            normalize_label(&goal.target)
        )
    }

    fn describe(&self, request: &ModelRequest) -> Value {
        let Some(frame) = request.images.iter().find_map(SimFrame::decode) else {
            return json!({"description": "", "objects": []});
        };
        let labels = dedup_labels(frame.objects.iter().map(|o| o.label.as_str()));
        let mut parts: Vec<String> = Vec::new();
        parts.push(format!("The table holds: {}.", labels.join(", ")));
        if let Some(i) = frame.attached {
            parts.push(format!(
                "The gripper holds the {}.",
                normalize_label(&frame.objects[i].label)
            ));
        }
        for g in &self.goals {
            let sentence = match goal_satisfied(&frame.objects, frame.attached, g) {
                Ok(true) => Self::positive(g),
                _ => Self::negative(g),
            };
            parts.push(format!("{sentence}."));
        }
        json!({"description": parts.join(" "), "objects": labels})
    }

    fn unmet<'a>(&'a self, scene: &str) -> Option<&'a GoalSpec> {
        let scene = normalize_label(scene);
        self.goals
            .iter()
            .find(|g| !scene.contains(&Self::positive(g)))
    }

    fn status(&self, s: &BTreeMap<String, String>) -> Value {
        let scene = s.get("scene").map(String::as_str).unwrap_or_default();
        match self.unmet(scene) {
            None => {
                json!({"verdict": "complete", "rationale": "every goal relation holds in the scene"})
            }
            Some(g) => {
                json!({"verdict": "proceed", "rationale": format!("{} yet", Self::negative(g))})
            }
        }
    }

    /// Positional or ordinal word that precedes `label` in `text`.
    fn descriptor_for(text: &str, label: &str) -> Option<String> {
        let text = normalize_label(text);
        let words: Vec<&str> = text.split(' ').collect();
        let head = label.split(' ').next()?;
        words.windows(2).find_map(|w| {
            (w[1] == head && (POSITIONAL.contains(&w[0]) || ORDINALS.contains(&w[0])))
                .then(|| w[0].to_string())
        })
    }

    fn plan(&self, s: &BTreeMap<String, String>) -> Value {
        let scene = s.get("scene").map(String::as_str).unwrap_or_default();
        let task = s.get("task").map(String::as_str).unwrap_or_default();
        let Some(g) = self.unmet(scene) else {
            return json!({"subtask": "no further step is needed"});
        };
        let subject = normalize_label(&g.subject);
        let target = normalize_label(&g.target);
        let named = match Self::descriptor_for(task, &subject) {
            Some(d) => format!("{d} {subject}"),
            None => subject,
        };
        let text = match g.kind {
            GoalKind::OnTarget => format!("pick up the {named} and place it on the {target}"),
            GoalKind::Stacked => format!("pick up the {named} and stack it on the {target}"),
            GoalKind::InRegion => format!("pick up the {named} and put it in the {target}"),
        };
        json!({"subtask": text})
    }

    fn keywords(&self, s: &BTreeMap<String, String>) -> Value {
        let text = s.get("subtask").map(String::as_str).unwrap_or_default();
        let mut labels = self.labels_in(text);
        if labels.is_empty() {
            let norm = normalize_label(text);
            let mut words = norm.split(' ');
            if let Some(next) = words.by_ref().skip_while(|w| *w != "the").nth(1) {
                labels.push(next.to_string());
            }
        }
        let mut descriptors = serde_json::Map::new();
        for l in &labels {
            if let Some(d) = Self::descriptor_for(text, l) {
                descriptors.insert(l.clone(), Value::String(d));
            }
        }
        json!({"keywords": labels, "descriptors": descriptors})
    }

    fn select(request: &ModelRequest, s: &BTreeMap<String, String>, count: u32) -> String {
        let descriptor =
            normalize_label(s.get("descriptor").map(String::as_str).unwrap_or_default());
        let mut marks = request
            .images
            .iter()
            .find_map(SimFrame::decode)
            .map(|f| f.marks)
            .unwrap_or_default();
        marks.sort_by(|a, b| a.at.u.total_cmp(&b.at.u).then(a.number.cmp(&b.number)));
        if marks.is_empty() {
            return "1".to_string();
        }
        let n = marks.len();
        let words: Vec<&str> = descriptor.split(' ').collect();
        let pos = if words.contains(&"left") {
            0
        } else if words.contains(&"right") {
            n - 1
        } else if words.contains(&"middle") {
            n / 2
        } else {
            ORDINALS
                .iter()
                .position(|o| words.contains(o))
                .unwrap_or(0)
                .min(n - 1)
        };
        marks[pos].number.min(count).to_string()
    }

    /// 1-based positions in the object listing, by label.
    fn listing_indices(listing: &str) -> Vec<(u32, String)> {
        listing
            .lines()
            .filter_map(|line| {
                let (num, rest) = line.trim().split_once(". ")?;
                let label = rest.split(" (instance").next()?;
                Some((num.parse().ok()?, normalize_label(label)))
            })
            .collect()
    }

    fn action(&self, s: &BTreeMap<String, String>) -> Value {
        let subtask = s.get("subtask").map(String::as_str).unwrap_or_default();
        let listing =
            Self::listing_indices(s.get("objects").map(String::as_str).unwrap_or_default());
        let labels = self.labels_in(subtask);
        let skill = infer_skill(subtask);
        let index_of = |k: usize| {
            let label = labels.get(k)?;
            listing.iter().find(|(_, l)| l == label).map(|(i, _)| *i)
        };
        let Some(subject) = index_of(0) else {
            return json!({});
        };
        let mapping = if skill == Skill::Rotate {
            alloc::vec![(1, subject)]
        } else {
            let Some(target) = index_of(1) else {
                return json!({});
            };
            alloc::vec![(1, subject), (2, target)]
        };
        let seq = reindex(&exemplar(skill, self.approach_offset), &mapping);
        serde_json::to_value(&seq).unwrap_or(Value::Null)
    }
}

impl ModelBackend for OracleBackend {
    fn invoke(&self, request: &ModelRequest) -> Result<String, GatewayError> {
        let schema = Schema::parse(&request.schema)
            .ok_or_else(|| GatewayError::UnknownSchema(request.schema.clone()))?;
        let s = sections(&request.user_text());
        let reply = match schema {
            Schema::Scene => self.describe(request),
            Schema::Status => self.status(&s),
            Schema::Subtask => self.plan(&s),
            Schema::Keywords => self.keywords(&s),
            Schema::Action => self.action(&s),
            Schema::Select { count } => return Ok(Self::select(request, &s, count)),
        };
        Ok(reply.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::Gateway;
    use crate::perception::{MarkableImage, NumeralMark, Pixel};
    use crate::prompts::PromptLibrary;
    use crate::simworld::{builtin_scenario, render_observation, spawn_scene, SimImage};
    use alloc::sync::Arc;

    fn oracle(name: &str) -> (Scenario, OracleBackend) {
        let s = builtin_scenario(name).unwrap();
        let o = OracleBackend::for_scenario(&s);
        (s, o)
    }

    #[test]
    fn longest_label_wins() {
        let (_, o) = oracle("eggplant_in_basket");
        assert_eq!(
            o.labels_in("move the sink wall near the sink"),
            ["sink wall", "sink"]
        );
        assert_eq!(
            o.labels_in("pick up the eggplant and put it in the basket"),
            ["eggplant", "basket"]
        );
        assert!(o.labels_in("eggplants").is_empty());
    }

    #[test]
    fn scene_status_plan_chain() {
        let (s, o) = oracle("carrot_on_plate");
        let w = spawn_scene(&s, 0).unwrap();
        let img = SimImage::new(&w, &render_observation(&w, &s.camera));
        let lib = PromptLibrary::builtin();
        let gw = Gateway::new(Arc::new(o), 2);
        let scene = crate::perception::describe_scene(
            &img.attachment(),
            &s.task,
            crate::prompts::SCENE_DESCRIPTION,
            &lib,
            &gw,
        )
        .unwrap();
        assert!(scene.text.contains("the carrot is not on the plate"));
        assert_eq!(scene.mentioned_objects, ["carrot", "plate"]);
        let memory = crate::reasoning::PlanningMemory::new();
        let d = crate::reasoning::evaluate_status(&scene, &s.task, &memory, "", &lib, &gw).unwrap();
        assert_eq!(d.verdict, crate::reasoning::Verdict::Proceed);
        let sub =
            crate::reasoning::plan_next_subtask(&scene, &s.task, &memory, 1, 2, &lib, &gw, &gw)
                .unwrap();
        assert_eq!(sub.text, "pick up the carrot and place it on the plate");
        assert_eq!(sub.keywords, ["carrot", "plate"]);
        assert!(sub.descriptors.is_empty());
        assert_eq!(gw.call_count(), 4);
    }

    #[test]
    fn middle_descriptor_flows_to_keywords() {
        let (s, o) = oracle("pepper_line");
        let sec: BTreeMap<String, String> = [
            ("task".to_string(), s.task.clone()),
            (
                "scene".to_string(),
                "the pepper is not on the plate".to_string(),
            ),
        ]
        .into_iter()
        .collect();
        let p = o.plan(&sec);
        assert_eq!(
            p["subtask"],
            "pick up the middle pepper and place it on the plate"
        );
        let k = o.keywords(
            &[(
                "subtask".to_string(),
                p["subtask"].as_str().unwrap().to_string(),
            )]
            .into_iter()
            .collect(),
        );
        assert_eq!(k["keywords"], json!(["pepper", "plate"]));
        assert_eq!(k["descriptors"], json!({"pepper": "middle"}));
    }

    #[test]
    fn select_reads_mark_positions() {
        let (s, o) = oracle("pepper_line");
        let w = spawn_scene(&s, 0).unwrap();
        let img = SimImage::new(&w, &render_observation(&w, &s.camera));
        let marks = [
            NumeralMark {
                number: 1,
                at: Pixel::new(30.0, 50.0),
            },
            NumeralMark {
                number: 2,
                at: Pixel::new(200.0, 50.0),
            },
            NumeralMark {
                number: 3,
                at: Pixel::new(110.0, 50.0),
            },
        ];
        let mut req =
            ModelRequest::new(Schema::Select { count: 3 }.id()).image(img.with_marks(&marks));
        for (d, want) in [
            ("middle", "3"),
            ("left", "1"),
            ("right", "2"),
            ("second", "3"),
        ] {
            req.messages.clear();
            req = req.user(format!("[label]\npepper\n[descriptor]\n{d}\n[count]\n3"));
            assert_eq!(o.invoke(&req).unwrap(), want, "{d}");
        }
    }

    #[test]
    fn action_reindexes_exemplar() {
        let (_, o) = oracle("carrot_on_plate");
        let listing = "1. plate (instance 1): center [0.4, 0.1, 0.02]; grasp: none detected (top-down at center)\n\
                       2. carrot (instance 1): center [0.2, -0.2, 0.03]; grasp [0.2, -0.2, 0.03] orientation [0, 1, 0, 0] score 0.90";
        let sec = [
            (
                "subtask".to_string(),
                "pick up the carrot and place it on the plate".to_string(),
            ),
            ("objects".to_string(), listing.to_string()),
        ]
        .into_iter()
        .collect();
        let v = o.action(&sec);
        let seq: crate::controller::ParameterizedActionSequence =
            serde_json::from_value(v.clone()).unwrap();
        assert_eq!(seq.skill_name, Skill::PickPlace);
        assert_eq!(seq.steps[0].object_index, 2);
        assert_eq!(seq.steps.last().unwrap().object_index, 1);
        crate::gateway::validate_response(&v.to_string(), &Schema::Action.id()).unwrap();
    }

    #[test]
    fn unknown_schema_is_an_error() {
        let (_, o) = oracle("carrot_on_plate");
        assert!(matches!(
            o.invoke(&ModelRequest::new("nope")),
            Err(GatewayError::UnknownSchema(_))
        ));
    }
}
