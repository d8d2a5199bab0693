//! Flat dotted-key run configuration.
//!
//! A config file is a single JSON object such as
//! `{"preset": "desk", "model.scale": 4, "train.adam.lr": 0.0001}`.
//! Keys are resolved on top of the preset defaults, then `--set key=value`
//! overrides are applied. Unknown keys and mistyped values are rejected.

use std::path::{Path, PathBuf};

use serde_json::{Map, Value};
use wdn::model::WdnConfig;
use wdn::training::TrainConfig;

use crate::exit::Failure;

pub const PRESET_KEY: &str = "preset";

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub preset: String,
    pub model: WdnConfig,
    pub train: TrainConfig,
    pub train_dir: Option<PathBuf>,
    pub val_dir: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub seed: u64,
    /// Thread count; 0 uses every core.
    pub workers: usize,
}

fn flatten(prefix: &str, value: &Value, out: &mut Map<String, Value>) {
    match value {
        Value::Object(map) => {
            for (k, v) in map {
                flatten(&format!("{prefix}.{k}"), v, out);
            }
        }
        other => {
            out.insert(prefix.to_string(), other.clone());
        }
    }
}

fn unflatten(flat: &Map<String, Value>, prefix: &str) -> Value {
    let mut root = Map::new();
    let lead = format!("{prefix}.");
    for (key, v) in flat {
        let Some(rest) = key.strip_prefix(&lead) else { continue };
        let parts: Vec<&str> = rest.split('.').collect();
        let mut node = &mut root;
        for p in &parts[..parts.len() - 1] {
            node = node
                .entry(p.to_string())
                .or_insert_with(|| Value::Object(Map::new()))
                .as_object_mut()
                .expect("config paths never collide with leaves");
        }
        node.insert(parts[parts.len() - 1].to_string(), v.clone());
    }
    Value::Object(root)
}

/// Every key with its default value for a preset.
pub fn defaults(preset: &str) -> Result<Map<String, Value>, Failure> {
    let (model, train) = match preset {
        "desk" => (WdnConfig::desk(), TrainConfig::desk()),
        "full" => (WdnConfig::full(), TrainConfig::full()),
        other => {
            return Err(Failure::config(format!(
                "invalid value for key `{PRESET_KEY}`: `{other}` (expected \"desk\" or \"full\")"
            )))
        }
    };
    let mut map = Map::new();
    map.insert(PRESET_KEY.into(), Value::String(preset.into()));
    flatten(
        "model",
        &serde_json::to_value(&model).expect("config serializes"),
        &mut map,
    );
    flatten(
        "train",
        &serde_json::to_value(&train).expect("config serializes"),
        &mut map,
    );
    map.remove("train.seed");
    map.insert("data.train_dir".into(), Value::Null);
    map.insert("data.val_dir".into(), Value::Null);
    map.insert("output.checkpoint".into(), Value::Null);
    map.insert("seed".into(), Value::from(0u64));
    map.insert("workers".into(), Value::from(0u64));
    Ok(map)
}

/// Keys whose default is `null` but which take a value of this kind.
fn nullable_kind(key: &str) -> Option<&'static str> {
    match key {
        "data.train_dir" | "data.val_dir" | "output.checkpoint" => Some("string"),
        "train.steps_per_epoch" => Some("number"),
        _ => None,
    }
}

fn kind(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "bool",
        Value::Number(_) => "number",
        Value::String(_) => "string",
        Value::Array(_) => "array",
        Value::Object(_) => "object",
    }
}

fn set_key(map: &mut Map<String, Value>, key: &str, value: Value) -> Result<(), Failure> {
    let Some(default) = map.get(key) else {
        return Err(Failure::config(format!("unknown config key `{key}`")));
    };
    let expected = match (default, nullable_kind(key)) {
        (Value::Null, Some(k)) => k,
        (d, _) => kind(d),
    };
    let got = kind(&value);
    let ok = got == expected || (got == "null" && nullable_kind(key).is_some());
    if !ok {
        return Err(Failure::config(format!(
            "invalid value for key `{key}`: expected {expected}, got {value}"
        )));
    }
    map.insert(key.to_string(), value);
    Ok(())
}

/// Parses a `--set` value: JSON when it parses, otherwise a bare string.
fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

/// Resolves the flat key map from an optional file and `key=value` overrides.
pub fn resolve_map(file: Option<&Path>, overrides: &[String]) -> Result<Map<String, Value>, Failure> {
    let mut entries: Vec<(String, Value)> = Vec::new();
    if let Some(path) = file {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::config(format!("cannot read config {}: {e}", path.display())))?;
        let value: Value = serde_json::from_str(&text)
            .map_err(|e| Failure::config(format!("config {} is not valid JSON: {e}", path.display())))?;
        let Value::Object(obj) = value else {
            return Err(Failure::config(format!(
                "config {} must be a JSON object",
                path.display()
            )));
        };
        entries.extend(obj);
    }
    for item in overrides {
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| Failure::config(format!("override `{item}` must look like key=value")))?;
        entries.push((k.trim().to_string(), parse_value(v.trim())));
    }
    let mut preset = "desk".to_string();
    for (k, v) in &entries {
        if k == PRESET_KEY {
            preset = v
                .as_str()
                .ok_or_else(|| Failure::config(format!("invalid value for key `{PRESET_KEY}`: {v}")))?
                .to_string();
        }
    }
    let mut map = defaults(&preset)?;
    for (k, v) in entries {
        if k != PRESET_KEY {
            set_key(&mut map, &k, v)?;
        }
    }
    Ok(map)
}

fn path_of(map: &Map<String, Value>, key: &str) -> Option<PathBuf> {
    map.get(key).and_then(Value::as_str).map(PathBuf::from)
}

fn number(map: &Map<String, Value>, key: &str) -> Result<u64, Failure> {
    map.get(key).and_then(Value::as_u64).ok_or_else(|| {
        Failure::config(format!(
            "invalid value for key `{key}`: expected a non-negative integer"
        ))
    })
}

impl RunConfig {
    pub fn from_map(map: &Map<String, Value>) -> Result<Self, Failure> {
        let model: WdnConfig = serde_json::from_value(unflatten(map, "model"))
            .map_err(|e| Failure::config(format!("invalid model.* value: {e}")))?;
        model.validate().map_err(|e| Failure::config(e.to_string()))?;
        let seed = number(map, "seed")?;
        let mut train_value = unflatten(map, "train");
        train_value["seed"] = Value::from(seed);
        let train: TrainConfig =
            serde_json::from_value(train_value).map_err(|e| Failure::config(format!("invalid train.* value: {e}")))?;
        Ok(Self {
            preset: map
                .get(PRESET_KEY)
                .and_then(Value::as_str)
                .unwrap_or("desk")
                .to_string(),
            model,
            train,
            train_dir: path_of(map, "data.train_dir"),
            val_dir: path_of(map, "data.val_dir"),
            checkpoint: path_of(map, "output.checkpoint"),
            seed,
            workers: number(map, "workers")? as usize,
        })
    }

    /// The resolved configuration as a flat key map.
    pub fn to_map(&self) -> Map<String, Value> {
        let mut map = defaults(&self.preset).expect("preset was validated");
        let mut set = |k: &str, v: Value| {
            map.insert(k.to_string(), v);
        };
        let mut model = Map::new();
        flatten(
            "model",
            &serde_json::to_value(&self.model).expect("config serializes"),
            &mut model,
        );
        let mut train = Map::new();
        flatten(
            "train",
            &serde_json::to_value(&self.train).expect("config serializes"),
            &mut train,
        );
        train.remove("train.seed");
        for (k, v) in model.into_iter().chain(train) {
            set(&k, v);
        }
        let path = |p: &Option<PathBuf>| {
            p.as_ref()
                .map_or(Value::Null, |p| Value::String(p.display().to_string()))
        };
        set("data.train_dir", path(&self.train_dir));
        set("data.val_dir", path(&self.val_dir));
        set("output.checkpoint", path(&self.checkpoint));
        set("seed", Value::from(self.seed));
        set("workers", Value::from(self.workers));
        map
    }
}
