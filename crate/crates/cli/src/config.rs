//! Run configuration documents and the resolved-config echo.

use std::fs;
use std::path::Path;

use serde_json::{json, Map, Value};

use ribforge_pipelines::{PipelineConfig, Preset};

use crate::error::{CliError, Result};

pub const RESOLVED_CONFIG_FILE: &str = "resolved-config.json";

/// Resolves a run document: `preset` selects the base ("desk" when absent),
/// `seed` sets every stage seed, and all other keys override config fields.
pub fn resolve(doc: &Value) -> Result<PipelineConfig> {
    let Value::Object(map) = doc else {
        return Err(CliError::Config("run config must be a JSON object".into()));
    };
    let mut rest = Map::new();
    let mut preset = Preset::Desk;
    let mut seed = None;
    for (k, v) in map {
        match k.as_str() {
            "preset" => {
                let s = v.as_str().ok_or_else(|| CliError::Config("preset must be a string".into()))?;
                preset = s.parse().map_err(|e: ribforge_pipelines::PipelineError| CliError::Config(e.to_string()))?;
            }
            "seed" => {
                seed = Some(v.as_u64().ok_or_else(|| CliError::Config("seed must be a non-negative integer".into()))?);
            }
            _ => {
                rest.insert(k.clone(), v.clone());
            }
        }
    }
    let mut cfg = PipelineConfig::preset(preset);
    if let Some(s) = seed {
        cfg = cfg.with_seed(s);
    }
    Ok(cfg.with_overrides(&Value::Object(rest))?)
}

/// Reads and resolves `path`, or the desk preset when no file is given.
pub fn load(path: Option<&Path>) -> Result<PipelineConfig> {
    let Some(path) = path else {
        return resolve(&json!({}));
    };
    let text = fs::read_to_string(path).map_err(CliError::io(path))?;
    let doc: Value =
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    resolve(&doc)
}

/// The echo written next to every command's artifacts. Paths are left out so
/// reruns into different directories produce identical files.
pub fn echo(command: &str, args: Value, cfg: &PipelineConfig) -> Value {
    json!({
        "command": command,
        "args": args,
        "config": serde_json::to_value(cfg).expect("config serialises"),
    })
}

pub fn write_json(path: &Path, value: &Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("json serialises");
    fs::write(path, text + "\n").map_err(CliError::io(path))
}

pub fn write_echo(dir: &Path, command: &str, args: Value, cfg: &PipelineConfig) -> Result<()> {
    write_json(&dir.join(RESOLVED_CONFIG_FILE), &echo(command, args, cfg))
}
