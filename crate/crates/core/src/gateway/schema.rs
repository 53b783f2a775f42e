//! Response schemas and their validators.
//!
//! Replies are JSON. A surrounding markdown code fence is tolerated; anything
//! else that does not match the schema is reported with the JSON path of the
//! first violated constraint.

use alloc::format;
use alloc::string::{String, ToString};
use core::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    Syntax,
    Missing,
    Type,
    Value,
    Range,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FormatViolation {
    pub kind: ViolationKind,
    /// JSON path of the offending value, `$` for the root.
    pub location: String,
    pub message: String,
}

impl FormatViolation {
    fn new(kind: ViolationKind, location: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            kind,
            location: location.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for FormatViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.location, self.message)
    }
}

/// Registered response shapes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schema {
    /// `{"description": str, "objects": [str]}`
    Scene,
    /// `{"verdict": "proceed"|"complete"|"failed", "rationale": str}` or a bare verdict string.
    Status,
    /// `{"subtask": str}`
    Subtask,
    /// `{"keywords": [str, ...], "descriptors": {label: str}}`
    Keywords,
    /// `{"skill": ..., "steps": [...]}`
    Action,
    /// Bare integer in `1..=count`.
    Select { count: u32 },
}

pub const SELECT_PREFIX: &str = "select_v1:";

impl Schema {
    pub fn parse(id: &str) -> Option<Schema> {
        Some(match id {
            "scene_v1" => Schema::Scene,
            "status_v1" => Schema::Status,
            "subtask_v1" => Schema::Subtask,
            "keywords_v1" => Schema::Keywords,
            "action_v1" => Schema::Action,
            _ => {
                let count: u32 = id.strip_prefix(SELECT_PREFIX)?.parse().ok()?;
                if count == 0 {
                    return None;
                }
                Schema::Select { count }
            }
        })
    }

    pub fn id(&self) -> String {
        match self {
            Schema::Scene => "scene_v1".to_string(),
            Schema::Status => "status_v1".to_string(),
            Schema::Subtask => "subtask_v1".to_string(),
            Schema::Keywords => "keywords_v1".to_string(),
            Schema::Action => "action_v1".to_string(),
            Schema::Select { count } => format!("{SELECT_PREFIX}{count}"),
        }
    }
}

fn strip_fence(raw: &str) -> &str {
    let trimmed = raw.trim();
    let Some(rest) = trimmed.strip_prefix("```") else {
        return trimmed;
    };
    let body = match rest.find('\n') {
        Some(i) => &rest[i + 1..],
        None => rest,
    };
    body.trim_end().strip_suffix("```").unwrap_or(body).trim()
}

/// Parses `raw` and checks it against `schema_id`.
pub fn validate_response(raw: &str, schema_id: &str) -> Result<Value, FormatViolation> {
    let schema = Schema::parse(schema_id).ok_or_else(|| {
        FormatViolation::new(
            ViolationKind::Value,
            "$",
            format!("schema `{schema_id}` is not registered"),
        )
    })?;
    let value: Value = serde_json::from_str(strip_fence(raw)).map_err(|e| {
        FormatViolation::new(ViolationKind::Syntax, "$", format!("not valid JSON ({e})"))
    })?;
    check(&value, schema)?;
    Ok(value)
}

fn check(value: &Value, schema: Schema) -> Result<(), FormatViolation> {
    match schema {
        Schema::Scene => {
            let obj = object(value, "$")?;
            string_field(obj, "$", "description", false)?;
            let objects = array_field(obj, "$", "objects")?;
            for (i, v) in objects.iter().enumerate() {
                nonempty_str(v, &format!("$.objects[{i}]"))?;
            }
            Ok(())
        }
        Schema::Status => {
            let verdict = match value {
                Value::String(s) => (s.as_str(), "$".to_string()),
                Value::Object(obj) => {
                    if let Some(r) = obj.get("rationale") {
                        if !r.is_string() {
                            return Err(type_err("$.rationale", "a string"));
                        }
                    }
                    (
                        string_field(obj, "$", "verdict", true)?,
                        "$.verdict".to_string(),
                    )
                }
                _ => return Err(type_err("$", "an object or a verdict string")),
            };
            match verdict.0 {
                "proceed" | "complete" | "failed" => Ok(()),
                other => Err(FormatViolation::new(
                    ViolationKind::Value,
                    verdict.1,
                    format!("unknown verdict `{other}` (expected proceed, complete or failed)"),
                )),
            }
        }
        Schema::Subtask => {
            let obj = object(value, "$")?;
            string_field(obj, "$", "subtask", true).map(|_| ())
        }
        Schema::Keywords => {
            let obj = object(value, "$")?;
            let keywords = array_field(obj, "$", "keywords")?;
            if keywords.is_empty() {
                return Err(FormatViolation::new(
                    ViolationKind::Value,
                    "$.keywords",
                    "must list at least one label",
                ));
            }
            for (i, v) in keywords.iter().enumerate() {
                nonempty_str(v, &format!("$.keywords[{i}]"))?;
            }
            if let Some(d) = obj.get("descriptors") {
                let map = object(d, "$.descriptors")?;
                for (k, v) in map {
                    nonempty_str(v, &format!("$.descriptors.{k}"))?;
                }
            }
            Ok(())
        }
        Schema::Action => check_action(value),
        Schema::Select { count } => {
            let n = match (value.as_u64(), value.as_i64()) {
                (Some(u), _) => i128::from(u),
                (None, Some(i)) => i128::from(i),
                _ => return Err(type_err("$", "an integer")),
            };
            if n < 1 || n > i128::from(count) {
                return Err(FormatViolation::new(
                    ViolationKind::Range,
                    "$",
                    format!("{n} is outside 1..={count}"),
                ));
            }
            Ok(())
        }
    }
}

fn check_action(value: &Value) -> Result<(), FormatViolation> {
    let obj = object(value, "$")?;
    let skill = string_field(obj, "$", "skill", true)?;
    one_of(skill, "$.skill", &["pick_place", "drag", "rotate"])?;
    let steps = array_field(obj, "$", "steps")?;
    if steps.is_empty() {
        return Err(FormatViolation::new(
            ViolationKind::Value,
            "$.steps",
            "must contain at least one step",
        ));
    }
    for (i, step) in steps.iter().enumerate() {
        let at = format!("$.steps[{i}]");
        let s = object(step, &at)?;
        let idx = s
            .get("object_index")
            .ok_or_else(|| missing(&at, "object_index"))?;
        match idx.as_u64() {
            Some(n) if n >= 1 && n <= u64::from(u32::MAX) => {}
            Some(_) | None if idx.is_number() => {
                return Err(FormatViolation::new(
                    ViolationKind::Range,
                    format!("{at}.object_index"),
                    "must be an integer >= 1",
                ))
            }
            _ => return Err(type_err(&format!("{at}.object_index"), "an integer")),
        }
        one_of(
            string_field(s, &at, "field", true)?,
            &format!("{at}.field"),
            &["center", "grasp"],
        )?;
        let offset = array_field(s, &at, "offset")?;
        if offset.len() != 3 {
            return Err(FormatViolation::new(
                ViolationKind::Value,
                format!("{at}.offset"),
                "must have exactly 3 components",
            ));
        }
        for (k, c) in offset.iter().enumerate() {
            match c.as_f64() {
                Some(f) if f.is_finite() => {}
                _ => return Err(type_err(&format!("{at}.offset[{k}]"), "a finite number")),
            }
        }
        one_of(
            string_field(s, &at, "orientation_ref", true)?,
            &format!("{at}.orientation_ref"),
            &["grasp", "top_down", "keep"],
        )?;
        if let Some(y) = s.get("yaw") {
            if !y.as_f64().is_some_and(f64::is_finite) {
                return Err(type_err(&format!("{at}.yaw"), "a finite number"));
            }
        }
        one_of(
            string_field(s, &at, "gripper", true)?,
            &format!("{at}.gripper"),
            &["open", "close", "hold"],
        )?;
        string_field(s, &at, "annotation", false)?;
    }
    Ok(())
}

fn object<'a>(value: &'a Value, at: &str) -> Result<&'a Map<String, Value>, FormatViolation> {
    value.as_object().ok_or_else(|| type_err(at, "an object"))
}

fn missing(at: &str, field: &str) -> FormatViolation {
    FormatViolation::new(
        ViolationKind::Missing,
        format!("{at}.{field}"),
        "missing required field",
    )
}

fn type_err(at: &str, expected: &str) -> FormatViolation {
    FormatViolation::new(ViolationKind::Type, at, format!("expected {expected}"))
}

fn string_field<'a>(
    obj: &'a Map<String, Value>,
    at: &str,
    field: &str,
    nonempty: bool,
) -> Result<&'a str, FormatViolation> {
    let v = obj.get(field).ok_or_else(|| missing(at, field))?;
    let path = format!("{at}.{field}");
    if nonempty {
        nonempty_str(v, &path)
    } else {
        v.as_str().ok_or_else(|| type_err(&path, "a string"))
    }
}

fn nonempty_str<'a>(v: &'a Value, at: &str) -> Result<&'a str, FormatViolation> {
    match v.as_str() {
        Some(s) if !s.trim().is_empty() => Ok(s),
        Some(_) => Err(FormatViolation::new(
            ViolationKind::Value,
            at,
            "must not be empty",
        )),
        None => Err(type_err(at, "a string")),
    }
}

fn array_field<'a>(
    obj: &'a Map<String, Value>,
    at: &str,
    field: &str,
) -> Result<&'a alloc::vec::Vec<Value>, FormatViolation> {
    obj.get(field)
        .ok_or_else(|| missing(at, field))?
        .as_array()
        .ok_or_else(|| type_err(&format!("{at}.{field}"), "an array"))
}

fn one_of(value: &str, at: &str, allowed: &[&str]) -> Result<(), FormatViolation> {
    if allowed.contains(&value) {
        Ok(())
    } else {
        Err(FormatViolation::new(
            ViolationKind::Value,
            at,
            format!("`{value}` is not one of {}", allowed.join(", ")),
        ))
    }
}
