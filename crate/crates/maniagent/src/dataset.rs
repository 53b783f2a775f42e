//! Line-delimited JSON trajectory files, one self-contained file per episode.
//!
//! ```text
//! {"record":"header","format_version":1,"episode_id":...,"camera":...,"goals":[...],"initial_state":...}
//! {"record":"step","index":0,"timestamp":...,"action":{...},...}
//! ...
//! {"record":"footer","step_count":N,"final_state":...,"success":true}
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use maniagent_core::harness::{
    SinkError, TrajectoryRecord, TrajectorySink, TrajectoryStep, TRAJECTORY_FORMAT_VERSION,
};
use maniagent_core::perception::CameraModel;
use maniagent_core::simworld::{GoalSpec, SimSettings, WorldState};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::files::{read_text, write_atomic};

pub const TRAJECTORY_EXTENSION: &str = "jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub format_version: u32,
    pub episode_id: String,
    pub scenario: String,
    pub task_text: String,
    pub seed: u64,
    pub camera: CameraModel,
    /// Goals with their success thresholds.
    pub goals: Vec<GoalSpec>,
    pub settings: SimSettings,
    pub initial_state: WorldState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Footer {
    pub step_count: u64,
    pub final_state: WorldState,
    pub success: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum Line {
    Header(Box<Header>),
    Step(TrajectoryStep),
    Footer(Footer),
}

pub fn encode_trajectory(record: &TrajectoryRecord) -> Result<String, serde_json::Error> {
    let header = Line::Header(Box::new(Header {
        format_version: record.format_version,
        episode_id: record.episode_id.clone(),
        scenario: record.scenario.clone(),
        task_text: record.task_text.clone(),
        seed: record.seed,
        camera: record.camera.clone(),
        goals: record.goals.clone(),
        settings: record.settings.clone(),
        initial_state: record.initial_state.clone(),
    }));
    let mut out = serde_json::to_string(&header)?;
    out.push('\n');
    for step in &record.steps {
        out.push_str(&serde_json::to_string(&Line::Step(step.clone()))?);
        out.push('\n');
    }
    let footer = Line::Footer(Footer {
        step_count: record.steps.len() as u64,
        final_state: record.final_state.clone(),
        success: record.success,
    });
    out.push_str(&serde_json::to_string(&footer)?);
    out.push('\n');
    Ok(out)
}

/// Parses one trajectory file body. `origin` only labels errors.
pub fn decode_trajectory(text: &str, origin: &Path) -> Result<TrajectoryRecord> {
    let bad = |line: usize, what: String| Error::parse(origin, format!("line {line}: {what}"));
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let parse = |(n, l): (usize, &str)| {
        serde_json::from_str::<Line>(l).map_err(|e| bad(n + 1, e.to_string()))
    };

    let header = match lines.next().map(parse).transpose()? {
        Some(Line::Header(h)) => *h,
        Some(_) => return Err(bad(1, "first record is not a header".into())),
        None => return Err(Error::parse(origin, "empty trajectory file")),
    };
    if header.format_version != TRAJECTORY_FORMAT_VERSION {
        return Err(bad(
            1,
            format!(
                "format version {} is not supported (expected {TRAJECTORY_FORMAT_VERSION})",
                header.format_version
            ),
        ));
    }
    let mut steps: Vec<TrajectoryStep> = Vec::new();
    let mut footer = None;
    for (n, l) in lines {
        if footer.is_some() {
            return Err(bad(n + 1, "record after footer".into()));
        }
        match parse((n, l))? {
            Line::Step(s) => {
                if let Some(prev) = steps.last() {
                    if s.timestamp < prev.timestamp {
                        return Err(bad(n + 1, "steps out of timestamp order".into()));
                    }
                }
                steps.push(s);
            }
            Line::Footer(f) => footer = Some(f),
            Line::Header(_) => return Err(bad(n + 1, "second header".into())),
        }
    }
    let footer = footer.ok_or_else(|| Error::parse(origin, "missing footer (truncated file?)"))?;
    if footer.step_count != steps.len() as u64 {
        return Err(Error::parse(
            origin,
            format!(
                "footer counts {} steps, file holds {}",
                footer.step_count,
                steps.len()
            ),
        ));
    }
    Ok(TrajectoryRecord {
        format_version: header.format_version,
        episode_id: header.episode_id,
        scenario: header.scenario,
        task_text: header.task_text,
        seed: header.seed,
        camera: header.camera,
        goals: header.goals,
        settings: header.settings,
        initial_state: header.initial_state,
        steps,
        final_state: footer.final_state,
        success: footer.success,
    })
}

pub fn read_trajectory(path: &Path) -> Result<TrajectoryRecord> {
    decode_trajectory(&read_text(path)?, path)
}

/// Path of the file an episode is written to.
pub fn trajectory_path(dir: &Path, episode_id: &str) -> PathBuf {
    dir.join(format!("{episode_id}.{TRAJECTORY_EXTENSION}"))
}

/// Writes `record` to its own file under `dir`, atomically.
pub fn write_trajectory(dir: &Path, record: &TrajectoryRecord) -> Result<PathBuf> {
    let path = trajectory_path(dir, &record.episode_id);
    let text = encode_trajectory(record).map_err(|e| Error::parse(&path, e))?;
    write_atomic(&path, text.as_bytes())?;
    Ok(path)
}

/// Trajectory files in `dir`, sorted by name.
pub fn list_trajectories(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == TRAJECTORY_EXTENSION) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Sink writing one file per episode into a directory.
#[derive(Debug, Clone)]
pub struct JsonlSink {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl JsonlSink {
    /// Creates `dir` if needed.
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Self {
            dir,
            written: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }
}

impl TrajectorySink for JsonlSink {
    fn write(&mut self, record: &TrajectoryRecord) -> Result<(), SinkError> {
        let path = write_trajectory(&self.dir, record).map_err(|e| SinkError(e.to_string()))?;
        self.written.push(path);
        Ok(())
    }
}
