//! Reading and writing the on-disk formats: scenarios, calibrations,
//! transcripts and prompt directories.

use std::fs;
use std::io::Write;
use std::path::Path;

use maniagent_core::gateway::{ScriptedBackend, TranscriptRecord};
use maniagent_core::perception::{CameraCalibration, CameraModel};
use maniagent_core::prompts::PromptLibrary;
use maniagent_core::simworld::Scenario;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Parses a JSON or TOML document, chosen by extension. Anything that is not `.toml` is read as JSON.
pub fn read_structured<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_text(path)?;
    if path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("toml"))
    {
        toml::from_str(&text).map_err(|e| Error::parse(path, e.message()))
    } else {
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e))
    }
}

pub fn load_scenario(path: &Path) -> Result<Scenario> {
    let scenario: Scenario = read_structured(path)?;
    scenario.validate().map_err(|e| Error::parse(path, e))?;
    Ok(scenario)
}

pub fn load_calibration(path: &Path) -> Result<CameraModel> {
    let cal: CameraCalibration = read_structured(path)?;
    CameraModel::try_from(cal).map_err(|e| Error::parse(path, e))
}

pub fn load_transcript(path: &Path) -> Result<ScriptedBackend> {
    let records: Vec<TranscriptRecord> = read_structured(path)?;
    Ok(ScriptedBackend::from_records(records))
}

/// Built-in prompts, overridden by every `<id>.txt` in `dir`.
pub fn load_prompts(dir: &Path) -> Result<PromptLibrary> {
    let mut lib = PromptLibrary::builtin();
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == "txt") {
            if let Some(id) = path.file_stem().and_then(|s| s.to_str()) {
                lib.insert(id, read_text(&path)?);
            }
        }
    }
    Ok(lib)
}

/// Writes `bytes` to a temporary file next to `path` and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(tmp.path(), e))?;
    tmp.as_file()
        .sync_all()
        .map_err(|e| Error::io(tmp.path(), e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::parse(path, e))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}
