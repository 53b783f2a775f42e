//! Status evaluation and incremental sub-task planning.
//!
//! The reasoning agent never decomposes the whole task up front. Each round it
//! judges the task status from a fresh scene description, the history and the
//! last execution report, and if work remains it proposes exactly one next
//! sub-task plus the detector keywords for it. A memory of earlier sub-tasks
//! rejects proposals that keep failing.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{Gateway, GatewayError, Schema};
use crate::perception::SceneDescription;
use crate::prompts::{self, PromptError, PromptLibrary};
use crate::text::{collapse_whitespace, dedup_labels, normalize_label};

/// Default number of non-succeeded repetitions tolerated before a proposal is rejected.
pub const DEFAULT_LOOP_LIMIT: u32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubTaskStatus {
    Pending,
    Succeeded,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubTask {
    pub id: u32,
    pub text: String,
    pub keywords: Vec<String>,
    /// Per-label phrases singling out one of several identical objects.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub descriptors: BTreeMap<String, String>,
    pub status: SubTaskStatus,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub subtask: SubTask,
    pub outcome: SubTaskStatus,
    #[serde(default)]
    pub note: String,
}

/// Append-only record of one episode's sub-tasks.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanningMemory {
    history: Vec<HistoryEntry>,
    /// Non-succeeded outcomes per normalized sub-task text.
    repeat_counts: BTreeMap<String, u32>,
}

/// Loop-counting key of a sub-task: lowercase, whitespace collapsed.
pub fn normalize_subtask(text: &str) -> String {
    collapse_whitespace(&text.to_lowercase())
}

impl PlanningMemory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn history(&self) -> &[HistoryEntry] {
        &self.history
    }

    pub fn is_empty(&self) -> bool {
        self.history.is_empty()
    }

    pub fn record(&mut self, subtask: &SubTask, outcome: SubTaskStatus, note: impl Into<String>) {
        let mut subtask = subtask.clone();
        subtask.status = outcome;
        if outcome != SubTaskStatus::Succeeded {
            *self
                .repeat_counts
                .entry(normalize_subtask(&subtask.text))
                .or_default() += 1;
        }
        self.history.push(HistoryEntry {
            subtask,
            outcome,
            note: note.into(),
        });
    }

    /// Earlier non-succeeded attempts at `text`.
    pub fn failures_of(&self, text: &str) -> u32 {
        self.repeat_counts
            .get(&normalize_subtask(text))
            .copied()
            .unwrap_or(0)
    }

    /// Prompt rendering of the history, one line per sub-task.
    pub fn render(&self) -> String {
        if self.history.is_empty() {
            return "(none)".to_string();
        }
        let mut out = String::new();
        for (i, h) in self.history.iter().enumerate() {
            let outcome = match h.outcome {
                SubTaskStatus::Succeeded => "succeeded",
                SubTaskStatus::Failed => "failed",
                SubTaskStatus::Pending => "pending",
            };
            let _ = write!(out, "{}. {}: {}", i + 1, h.subtask.text, outcome);
            if !h.note.is_empty() {
                let _ = write!(out, " ({})", h.note);
            }
            out.push('\n');
        }
        out.trim_end().to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Proceed,
    TaskComplete,
    TaskFailed,
}

impl Verdict {
    pub fn is_terminal(self) -> bool {
        self != Verdict::Proceed
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatusDecision {
    pub verdict: Verdict,
    pub rationale_text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GuardDecision {
    Accept,
    Reject { failures: u32 },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReasoningError {
    #[error("sub-task \"{text}\" already failed {failures} time(s)")]
    LoopDetected { text: String, failures: u32 },
    #[error("episode already ended with {0:?}")]
    Terminated(Verdict),
    #[error("keyword extraction returned no usable label")]
    NoKeywords,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

/// Rejects `candidate` once its text has `limit` non-succeeded outcomes in `memory`.
///
/// # Panics
///
/// If `limit` is zero.
pub fn loop_guard(memory: &PlanningMemory, candidate: &SubTask, limit: u32) -> GuardDecision {
    assert!(limit >= 1, "loop limit must be at least 1");
    let failures = memory.failures_of(&candidate.text);
    if failures >= limit {
        GuardDecision::Reject { failures }
    } else {
        GuardDecision::Accept
    }
}

/// Asks the status backend whether the task is done, impossible or needs another step.
///
/// With an empty history a `failed` verdict is read as `proceed`: nothing has
/// been attempted yet. A reply that stays malformed after the retry budget
/// yields `task_failed` with the violation as rationale.
pub fn evaluate_status(
    scene: &SceneDescription,
    task_text: &str,
    memory: &PlanningMemory,
    last_report: &str,
    prompts: &PromptLibrary,
    gateway: &Gateway,
) -> Result<StatusDecision, ReasoningError> {
    let history = memory.render();
    let report = if last_report.is_empty() {
        "(none)"
    } else {
        last_report
    };
    let request = prompts.request(
        prompts::STATUS_EVAL,
        Schema::Status.id(),
        &[
            ("task", task_text),
            ("scene", &scene.text),
            ("history", &history),
            ("report", report),
        ],
    )?;
    let response = match gateway.complete(&request) {
        Ok(r) => r,
        Err(e @ GatewayError::Format { .. }) => {
            return Ok(StatusDecision {
                verdict: Verdict::TaskFailed,
                rationale_text: format!("status reply unusable: {e}"),
            })
        }
        Err(e) => return Err(e.into()),
    };
    let payload = &response.parsed_payload;
    let (word, rationale) = match payload.as_str() {
        Some(v) => (v, ""),
        None => (
            payload["verdict"].as_str().unwrap_or_default(),
            payload["rationale"].as_str().unwrap_or_default(),
        ),
    };
    let verdict = match word {
        "complete" => Verdict::TaskComplete,
        "failed" if !memory.is_empty() => Verdict::TaskFailed,
        _ => Verdict::Proceed,
    };
    Ok(StatusDecision {
        verdict,
        rationale_text: rationale.to_string(),
    })
}

/// Detector labels and instance descriptors for a sub-task.
pub fn extract_keywords(
    subtask_text: &str,
    prompts: &PromptLibrary,
    gateway: &Gateway,
) -> Result<(Vec<String>, BTreeMap<String, String>), ReasoningError> {
    let request = prompts.request(
        prompts::EXTRACT_KEYWORDS,
        Schema::Keywords.id(),
        &[("subtask", subtask_text)],
    )?;
    let response = gateway.complete(&request)?;
    let payload = &response.parsed_payload;
    let keywords = payload["keywords"]
        .as_array()
        .map(|a| dedup_labels(a.iter().filter_map(|v| v.as_str())))
        .unwrap_or_default();
    if keywords.is_empty() {
        return Err(ReasoningError::NoKeywords);
    }
    let descriptors = payload["descriptors"]
        .as_object()
        .map(|m| {
            m.iter()
                .filter_map(|(k, v)| Some((normalize_label(k), v.as_str()?.trim().to_string())))
                .filter(|(k, _)| keywords.contains(k))
                .collect()
        })
        .unwrap_or_default();
    Ok((keywords, descriptors))
}

/// Proposes the next sub-task, screens it with [`loop_guard`] and extracts its keywords.
#[allow(clippy::too_many_arguments)]
pub fn plan_next_subtask(
    scene: &SceneDescription,
    task_text: &str,
    memory: &PlanningMemory,
    next_id: u32,
    loop_limit: u32,
    prompts: &PromptLibrary,
    planner: &Gateway,
    keyword_backend: &Gateway,
) -> Result<SubTask, ReasoningError> {
    let history = memory.render();
    let request = prompts.request(
        prompts::PLAN_SUBTASK,
        Schema::Subtask.id(),
        &[
            ("task", task_text),
            ("scene", &scene.text),
            ("history", &history),
        ],
    )?;
    let response = planner.complete(&request)?;
    let text = collapse_whitespace(
        response.parsed_payload["subtask"]
            .as_str()
            .unwrap_or_default(),
    );
    let mut subtask = SubTask {
        id: next_id,
        text,
        keywords: Vec::new(),
        descriptors: BTreeMap::new(),
        status: SubTaskStatus::Pending,
    };
    if let GuardDecision::Reject { failures } = loop_guard(memory, &subtask, loop_limit) {
        return Err(ReasoningError::LoopDetected {
            text: subtask.text,
            failures,
        });
    }
    let (keywords, descriptors) = extract_keywords(&subtask.text, prompts, keyword_backend)?;
    subtask.keywords = keywords;
    subtask.descriptors = descriptors;
    Ok(subtask)
}

/// Per-episode reasoning state. Terminal verdicts are absorbing: once one is
/// reached, every further call returns [`ReasoningError::Terminated`].
#[derive(Debug, Clone)]
pub struct ReasoningSession {
    memory: PlanningMemory,
    loop_limit: u32,
    next_id: u32,
    terminal: Option<Verdict>,
}

impl ReasoningSession {
    pub fn new(loop_limit: u32) -> Self {
        assert!(loop_limit >= 1, "loop limit must be at least 1");
        Self {
            memory: PlanningMemory::new(),
            loop_limit,
            next_id: 1,
            terminal: None,
        }
    }

    pub fn memory(&self) -> &PlanningMemory {
        &self.memory
    }

    pub fn terminal(&self) -> Option<Verdict> {
        self.terminal
    }

    fn ensure_open(&self) -> Result<(), ReasoningError> {
        match self.terminal {
            Some(v) => Err(ReasoningError::Terminated(v)),
            None => Ok(()),
        }
    }

    pub fn evaluate(
        &mut self,
        scene: &SceneDescription,
        task_text: &str,
        last_report: &str,
        prompts: &PromptLibrary,
        gateway: &Gateway,
    ) -> Result<StatusDecision, ReasoningError> {
        self.ensure_open()?;
        let decision = evaluate_status(
            scene,
            task_text,
            &self.memory,
            last_report,
            prompts,
            gateway,
        )?;
        if decision.verdict.is_terminal() {
            self.terminal = Some(decision.verdict);
        }
        Ok(decision)
    }

    /// Plans the next sub-task. A loop-guard rejection ends the session as failed.
    pub fn plan(
        &mut self,
        scene: &SceneDescription,
        task_text: &str,
        prompts: &PromptLibrary,
        planner: &Gateway,
        keyword_backend: &Gateway,
    ) -> Result<SubTask, ReasoningError> {
        self.ensure_open()?;
        let result = plan_next_subtask(
            scene,
            task_text,
            &self.memory,
            self.next_id,
            self.loop_limit,
            prompts,
            planner,
            keyword_backend,
        );
        match &result {
            Ok(_) => self.next_id += 1,
            Err(ReasoningError::LoopDetected { .. }) => self.terminal = Some(Verdict::TaskFailed),
            Err(_) => {}
        }
        result
    }

    pub fn record(
        &mut self,
        subtask: &SubTask,
        outcome: SubTaskStatus,
        note: impl Into<String>,
    ) -> Result<(), ReasoningError> {
        self.ensure_open()?;
        self.memory.record(subtask, outcome, note);
        Ok(())
    }

    /// Ends the session as failed for reasons outside reasoning (caps, timeouts).
    pub fn abort(&mut self) {
        self.terminal.get_or_insert(Verdict::TaskFailed);
    }
}
