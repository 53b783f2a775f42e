//! Run configuration: a TOML file with nested sections, overridable from the
//! environment.
//!
//! Every key can be set through `MANIAGENT_<SECTION>__<KEY>`, with further
//! `__` separators for deeper nesting, for example
//! `MANIAGENT_EPISODE__LOOP_LIMIT=3` or `MANIAGENT_NOISE__DROP_PROB=0.05`.
//! Values are read as TOML literals when they parse, as plain strings
//! otherwise. All keys are optional; see [`RunConfig`] for defaults.

use std::path::{Path, PathBuf};

use maniagent_core::controller::ControllerConfig;
use maniagent_core::gateway::{BackendProfile, DEFAULT_MAX_RETRIES};
use maniagent_core::harness::{EpisodeConfig, DEFAULT_EPISODE_CAP, DEFAULT_TIMEOUT_S};
use maniagent_core::perception::PerceptionConfig;
use maniagent_core::prompts;
use maniagent_core::reasoning::DEFAULT_LOOP_LIMIT;
use maniagent_core::simworld::{DistanceMetric, NoiseSpec, SimSettings};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::files::read_text;

pub const ENV_PREFIX: &str = "MANIAGENT_";
const ENV_SEPARATOR: &str = "__";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub backends: BackendsSection,
    pub episode: EpisodeSection,
    pub perception: PerceptionConfig,
    pub controller: ControllerConfig,
    pub noise: NoiseSpec,
    pub sim: SimSettings,
    pub goal: GoalOverride,
    pub bench: BenchSection,
    pub collect: CollectSection,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClockKind {
    /// Accelerated time: fixed charges per model call and per waypoint.
    #[default]
    Simulated,
    Wall,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    /// Built-in scenario name or path to a scenario file.
    pub scenario: String,
    pub seed: u64,
    /// Action cache file; none keeps the cache in memory.
    pub cache_path: Option<PathBuf>,
    /// Directory of `<id>.txt` prompt overrides.
    pub prompts_dir: Option<PathBuf>,
    /// Calibration file replacing the scenario camera.
    pub calibration: Option<PathBuf>,
    pub clock: ClockKind,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            scenario: "carrot_on_plate".into(),
            seed: 0,
            cache_path: None,
            prompts_dir: None,
            calibration: None,
            clock: ClockKind::Simulated,
        }
    }
}

/// Backend per agent role, as `scripted:oracle`, `scripted:<transcript>` or `live:<url>[#model]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendsSection {
    pub default: String,
    pub scene: Option<String>,
    pub status: Option<String>,
    pub plan: Option<String>,
    pub keywords: Option<String>,
    pub disambiguate: Option<String>,
    pub action: Option<String>,
    pub max_retries: u32,
    pub timeout_s: f64,
    /// Environment variable holding the API credential of live backends.
    pub api_key_env: Option<String>,
    /// Overrides the request temperature of live backends when positive.
    pub temperature: f64,
}

impl Default for BackendsSection {
    fn default() -> Self {
        Self {
            default: "scripted:oracle".into(),
            scene: None,
            status: None,
            plan: None,
            keywords: None,
            disambiguate: None,
            action: None,
            max_retries: DEFAULT_MAX_RETRIES,
            timeout_s: 60.0,
            api_key_env: None,
            temperature: 0.0,
        }
    }
}

pub const ROLES: [&str; 6] = [
    "scene",
    "status",
    "plan",
    "keywords",
    "disambiguate",
    "action",
];

impl BackendsSection {
    /// Spec string of `role`, falling back to the default.
    pub fn spec(&self, role: &str) -> &str {
        let specific = match role {
            "scene" => &self.scene,
            "status" => &self.status,
            "plan" => &self.plan,
            "keywords" => &self.keywords,
            "disambiguate" => &self.disambiguate,
            "action" => &self.action,
            _ => &None,
        };
        specific.as_deref().unwrap_or(&self.default)
    }

    /// Replaces every role with `spec`.
    pub fn set_all(&mut self, spec: &str) {
        self.default = spec.to_string();
        for slot in [
            &mut self.scene,
            &mut self.status,
            &mut self.plan,
            &mut self.keywords,
            &mut self.disambiguate,
            &mut self.action,
        ] {
            *slot = None;
        }
    }

    pub fn profile(&self, role: &str) -> Result<BackendProfile> {
        let mut p = BackendProfile::parse_spec(self.spec(role))
            .map_err(|e| Error::Config(format!("backends.{role}: {e}")))?;
        p.max_retries = self.max_retries;
        p.timeout_s = self.timeout_s;
        p.api_key_env = self.api_key_env.clone();
        p.temperature = self.temperature;
        p.validate()
            .map_err(|e| Error::Config(format!("backends.{role}: {e}")))?;
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeSection {
    pub loop_limit: u32,
    pub episode_cap: u32,
    pub timeout_s: f64,
    pub action_seconds: f64,
    pub model_call_seconds: f64,
    pub scene_prompt: String,
}

impl Default for EpisodeSection {
    fn default() -> Self {
        Self {
            loop_limit: DEFAULT_LOOP_LIMIT,
            episode_cap: DEFAULT_EPISODE_CAP,
            timeout_s: DEFAULT_TIMEOUT_S,
            action_seconds: 1.0,
            model_call_seconds: 2.0,
            scene_prompt: prompts::SCENE_DESCRIPTION.into(),
        }
    }
}

/// Replaces the success rule of every scenario goal when set.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GoalOverride {
    pub threshold: Option<f64>,
    pub metric: Option<DistanceMetric>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    /// Scenario names, or `["all"]` for the four benchmark tasks.
    pub scenarios: Vec<String>,
    pub episodes: u32,
    pub repeats: u32,
    pub base_seed: u64,
}

impl Default for BenchSection {
    fn default() -> Self {
        Self {
            scenarios: vec!["all".into()],
            episodes: 24,
            repeats: 3,
            base_seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollectMode {
    #[default]
    Grid,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CollectSection {
    pub target: u32,
    pub mode: CollectMode,
    /// Grid corners; default to the spawn region of the manipulated object.
    pub min: Option<[f64; 2]>,
    pub max: Option<[f64; 2]>,
    pub attempts: u32,
    pub base_seed: u64,
    pub out_dir: PathBuf,
}

impl Default for CollectSection {
    fn default() -> Self {
        Self {
            target: 25,
            mode: CollectMode::Grid,
            min: None,
            max: None,
            attempts: 3,
            base_seed: 0,
            out_dir: PathBuf::from("dataset"),
        }
    }
}

impl RunConfig {
    /// Reads `path` (defaults when `None`) and applies `MANIAGENT_*` overrides from `env`.
    pub fn load<I>(path: Option<&Path>, env: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        Self::load_layers(path, env, Vec::new())
    }

    /// Like [`RunConfig::load`], with a second override layer applied after the environment.
    pub fn load_layers<I>(
        path: Option<&Path>,
        env: I,
        overrides: Vec<(String, String)>,
    ) -> Result<Self>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut table = match path {
            Some(p) => {
                if !p.is_file() {
                    return Err(Error::Config(format!(
                        "config file {} not found",
                        p.display()
                    )));
                }
                let text = read_text(p)?;
                text.parse::<toml::Table>()
                    .map_err(|e| Error::Config(format!("{}: {}", p.display(), e.message())))?
            }
            None => toml::Table::new(),
        };
        let mut env: Vec<(String, String)> = env.into_iter().collect();
        env.sort();
        apply_env_overrides(&mut table, env)?;
        apply_env_overrides(&mut table, overrides)?;
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).unwrap_or_default()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        for role in ROLES {
            self.backends.profile(role)?;
        }
        if self.episode.loop_limit == 0 {
            return bad("episode.loop_limit must be at least 1");
        }
        if !(self.episode.timeout_s > 0.0) {
            return bad("episode.timeout_s must be positive");
        }
        if !(self.episode.action_seconds >= 0.0 && self.episode.model_call_seconds >= 0.0) {
            return bad("episode durations must be non-negative");
        }
        if !(self.perception.grasp_radius > 0.0) {
            return bad("perception.grasp_radius must be positive");
        }
        if !self.controller.approach_offset.is_finite() {
            return bad("controller.approach_offset must be finite");
        }
        let n = &self.noise;
        if !(n.center_jitter_sigma_m >= 0.0) {
            return bad("noise.center_jitter_sigma_m must be non-negative");
        }
        if !((0.0..=1.0).contains(&n.drop_prob) && (0.0..=1.0).contains(&n.depth_hole_prob)) {
            return bad("noise probabilities must lie in [0, 1]");
        }
        if !(self.sim.attach_radius > 0.0) {
            return bad("sim.attach_radius must be positive");
        }
        if self.goal.threshold.is_some_and(|t| !(t > 0.0)) {
            return bad("goal.threshold must be positive");
        }
        if self.bench.episodes == 0 || self.bench.repeats == 0 {
            return bad("bench.episodes and bench.repeats must be at least 1");
        }
        if self.collect.target == 0 {
            return bad("collect.target must be at least 1");
        }
        Ok(())
    }

    pub fn episode_config(&self) -> EpisodeConfig {
        EpisodeConfig {
            loop_limit: self.episode.loop_limit,
            episode_cap: self.episode.episode_cap,
            timeout_s: self.episode.timeout_s,
            perception: self.perception.clone(),
            controller: self.controller.clone(),
            noise: self.noise,
            sim: self.sim.clone(),
            action_seconds: self.episode.action_seconds,
            model_call_seconds: self.episode.model_call_seconds,
            scene_prompt: self.episode.scene_prompt.clone(),
        }
    }
}

fn parse_env_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Writes every `MANIAGENT_A__B=v` pair into `table` as `a.b = v`, in order.
///
/// Variables without a `__` separator (such as credential names) are ignored.
pub fn apply_env_overrides<I>(table: &mut toml::Table, env: I) -> Result<()>
where
    I: IntoIterator<Item = (String, String)>,
{
    let vars = env
        .into_iter()
        .filter(|(k, _)| k.starts_with(ENV_PREFIX) && k.contains(ENV_SEPARATOR));
    for (key, raw) in vars {
        let path: Vec<String> = key[ENV_PREFIX.len()..]
            .split(ENV_SEPARATOR)
            .map(str::to_ascii_lowercase)
            .collect();
        if path.iter().any(String::is_empty) {
            return Err(Error::Config(format!("malformed override variable {key}")));
        }
        let (leaf, parents) = path.split_last().expect("split yields at least one part");
        let mut cur = &mut *table;
        for part in parents {
            let entry = cur
                .entry(part.clone())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            cur = entry
                .as_table_mut()
                .ok_or_else(|| Error::Config(format!("{key}: `{part}` is not a section")))?;
        }
        cur.insert(leaf.clone(), parse_env_value(&raw));
    }
    Ok(())
}
