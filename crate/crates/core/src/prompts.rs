//! Prompt assets, loaded by id.
//!
//! A template is a system part and a user part separated by a line holding
//! only `---`. `{slot}` placeholders are substituted at render time. The user
//! part is laid out as `[section]` headers so replies can be reproduced by the
//! rule-based oracle.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use thiserror::Error;

use crate::gateway::ModelRequest;

pub const SCENE_DESCRIPTION: &str = "scene_description_v1";
pub const STATUS_EVAL: &str = "status_eval_v1";
pub const PLAN_SUBTASK: &str = "plan_subtask_v1";
pub const EXTRACT_KEYWORDS: &str = "extract_keywords_v1";
pub const SELECT_INSTANCE: &str = "select_instance_v1";
pub const ACTION_GENERATION: &str = "action_generation_v1";

const BUILTIN: &[(&str, &str)] = &[
    (
        SCENE_DESCRIPTION,
        include_str!("../prompts/scene_description_v1.txt"),
    ),
    (STATUS_EVAL, include_str!("../prompts/status_eval_v1.txt")),
    (PLAN_SUBTASK, include_str!("../prompts/plan_subtask_v1.txt")),
    (
        EXTRACT_KEYWORDS,
        include_str!("../prompts/extract_keywords_v1.txt"),
    ),
    (
        SELECT_INSTANCE,
        include_str!("../prompts/select_instance_v1.txt"),
    ),
    (
        ACTION_GENERATION,
        include_str!("../prompts/action_generation_v1.txt"),
    ),
];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("prompt asset `{0}` not found")]
    Missing(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptLibrary {
    prompts: BTreeMap<String, String>,
}

impl Default for PromptLibrary {
    fn default() -> Self {
        Self::builtin()
    }
}

impl PromptLibrary {
    pub fn empty() -> Self {
        Self {
            prompts: BTreeMap::new(),
        }
    }

    pub fn builtin() -> Self {
        let mut lib = Self::empty();
        for (id, text) in BUILTIN {
            lib.insert(*id, *text);
        }
        lib
    }

    pub fn insert(&mut self, id: impl Into<String>, text: impl Into<String>) {
        self.prompts.insert(id.into(), text.into());
    }

    pub fn get(&self, id: &str) -> Result<&str, PromptError> {
        self.prompts
            .get(id)
            .map(String::as_str)
            .ok_or_else(|| PromptError::Missing(id.to_string()))
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.prompts.keys().map(String::as_str)
    }

    /// Renders `id` into a request for `schema`.
    pub fn request(
        &self,
        id: &str,
        schema: impl Into<String>,
        slots: &[(&str, &str)],
    ) -> Result<ModelRequest, PromptError> {
        let rendered = render(self.get(id)?, slots);
        let (system, user) = split_template(&rendered);
        let mut req = ModelRequest::new(schema);
        if !system.is_empty() {
            req = req.system(system);
        }
        Ok(req.user(user))
    }
}

/// Substitutes every `{name}` placeholder listed in `slots`.
pub fn render(template: &str, slots: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let tail = &rest[open..];
        let replaced = tail.find('}').and_then(|close| {
            let name = &tail[1..close];
            slots
                .iter()
                .find(|(slot, _)| *slot == name)
                .map(|(_, value)| (close, *value))
        });
        match replaced {
            Some((close, value)) => {
                out.push_str(value);
                rest = &tail[close + 1..];
            }
            None => {
                out.push('{');
                rest = &tail[1..];
            }
        }
    }
    out.push_str(rest);
    out
}

fn split_template(rendered: &str) -> (String, String) {
    let mut system = Vec::new();
    let mut user = Vec::new();
    let mut in_user = false;
    for line in rendered.lines() {
        if !in_user && line.trim() == "---" {
            in_user = true;
            continue;
        }
        if in_user {
            user.push(line);
        } else {
            system.push(line);
        }
    }
    if !in_user {
        return (String::new(), system.join("\n").trim().to_string());
    }
    (
        system.join("\n").trim().to_string(),
        user.join("\n").trim().to_string(),
    )
}

/// Splits `[section]`-headed text into a map of trimmed section bodies.
pub fn sections(text: &str) -> BTreeMap<String, String> {
    let mut out: BTreeMap<String, String> = BTreeMap::new();
    let mut current: Option<String> = None;
    for line in text.lines() {
        let t = line.trim();
        if t.len() > 2
            && t.starts_with('[')
            && t.ends_with(']')
            && !t[1..t.len() - 1].contains(['[', ']'])
        {
            let name = t[1..t.len() - 1].to_string();
            out.entry(name.clone()).or_default();
            current = Some(name);
            continue;
        }
        if let Some(name) = &current {
            let body = out.entry(name.clone()).or_default();
            if !body.is_empty() {
                body.push('\n');
            }
            body.push_str(line);
        }
    }
    for body in out.values_mut() {
        *body = body.trim().to_string();
    }
    out
}
