use std::fs;
use std::path::Path;

use fuzzyseg::harness::ConstraintSet;
use fuzzyseg::refine::RefineConfig;
use fuzzyseg::superpixels::SlicConfig;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::CliError;

pub const SEED_ENV: &str = "FUZZYSEG_SEED";

/// Settings shared by every command, read from an optional JSON file,
/// then `--set` overrides, then dedicated flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub constraints: ConstraintSet,
    pub refine: RefineConfig,
    /// `None`: 200 superpixels per 64x64 pixels.
    pub slic: Option<SlicConfig>,
    /// Probability floor when turning a probability field into logits.
    pub init_floor: f64,
    /// Fixed class order; annotation files are mapped onto it by name.
    pub classes: Option<Vec<String>>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            constraints: ConstraintSet::default(),
            refine: RefineConfig::default(),
            slic: None,
            init_floor: 1e-6,
            classes: None,
        }
    }
}

impl RunConfig {
    pub fn slic_for(&self, height: usize, width: usize) -> SlicConfig {
        self.slic.unwrap_or_else(|| SlicConfig::for_area(height, width))
    }

    fn validate(&self) -> Result<(), CliError> {
        self.refine.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if self.constraints.families.is_empty() {
            return Err(CliError::Config("constraints.families is empty".into()));
        }
        if !(self.init_floor > 0.0 && self.init_floor <= 0.1) {
            return Err(CliError::Config(format!("init_floor must be in (0, 0.1], got {}", self.init_floor)));
        }
        Ok(())
    }
}

/// Sets `root[a][b]...` for the dotted `key`, creating objects on the way.
fn set_path(root: &mut Value, key: &str, value: Value) -> Result<(), CliError> {
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("malformed key `{key}`")));
    }
    for part in &parts[..parts.len() - 1] {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| CliError::Config(format!("`{key}`: `{part}` is inside a non-object value")))?;
        node = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
    node.as_object_mut()
        .ok_or_else(|| CliError::Config(format!("`{key}` points into a non-object value")))?
        .insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// `key=value`; the value is JSON when it parses as JSON, a string otherwise.
pub fn parse_override(text: &str) -> Result<(String, Value), CliError> {
    let (key, raw) =
        text.split_once('=').ok_or_else(|| CliError::Config(format!("override `{text}` is not key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok((key.trim().to_string(), value))
}

pub fn load(file: Option<&Path>, overrides: &[String], flags: Vec<(&str, Value)>) -> Result<RunConfig, CliError> {
    let mut root = match file {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
            let v: Value =
                serde_json::from_str(&text).map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))?;
            if !v.is_object() {
                return Err(CliError::Config(format!("config {} must be a JSON object", path.display())));
            }
            v
        }
        None => Value::Object(Map::new()),
    };
    for o in overrides {
        let (k, v) = parse_override(o)?;
        set_path(&mut root, &k, v)?;
    }
    for (k, v) in flags {
        set_path(&mut root, k, v)?;
    }
    if root.get("seed").is_none() {
        if let Ok(raw) = std::env::var(SEED_ENV) {
            let seed: u64 = raw
                .trim()
                .parse()
                .map_err(|_| CliError::Config(format!("{SEED_ENV}=`{raw}` is not a non-negative integer")))?;
            set_path(&mut root, "seed", Value::from(seed))?;
        }
    }
    let cfg: RunConfig = serde_json::from_value(root).map_err(|e| CliError::Config(format!("config: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}
