//! Effective configuration: defaults, then a TOML file, then `RUNREID_*`
//! environment variables, then command-line flags.

use std::path::Path;

use runreid_core::{Error, PipelineConfig};
use serde_json::{Map, Value};

pub const ENV_PREFIX: &str = "RUNREID_";

/// A dotted config path with its new value, e.g. `fusion.lambda = 0.5`.
pub type Override = (String, Value);

/// JSON if it parses, otherwise the raw string.
pub fn parse_scalar(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

/// Parses `key.path=value`.
pub fn parse_assignment(s: &str) -> Result<Override, Error> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::InvalidConfig(format!("expected KEY=VALUE, got {s:?}")))?;
    Ok((k.trim().to_string(), parse_scalar(v.trim())))
}

/// `RUNREID_TRACKER__MAX_AGE=40` becomes `tracker.max_age = 40`.
pub fn env_overrides(vars: impl IntoIterator<Item = (String, String)>) -> Vec<Override> {
    let mut out: Vec<Override> = vars
        .into_iter()
        .filter_map(|(k, v)| {
            let key = k.strip_prefix(ENV_PREFIX)?;
            Some((key.to_lowercase().replace("__", "."), parse_scalar(&v)))
        })
        .collect();
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}

fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (b, p) => *b = p,
    }
}

fn set_path(root: &mut Value, path: &str, value: Value) -> Result<(), Error> {
    let mut cur = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if part.is_empty() {
            return Err(Error::InvalidConfig(format!("bad config key {path:?}")));
        }
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| Error::InvalidConfig(format!("config key {path:?} crosses a scalar")))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        cur = obj
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Map::new()));
    }
    Ok(())
}

pub fn load(
    file: Option<&Path>,
    env: &[Override],
    flags: &[Override],
) -> Result<PipelineConfig, Error> {
    let mut value = serde_json::to_value(PipelineConfig::default()).expect("config serializes");
    if let Some(path) = file {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
            _ => Error::Io {
                path: path.to_path_buf(),
                source: e,
            },
        })?;
        let doc: toml::Table = toml::from_str(&text)
            .map_err(|e| Error::InvalidConfig(format!("{}: {}", path.display(), e.message())))?;
        merge(
            &mut value,
            serde_json::to_value(doc).expect("toml converts to json"),
        );
    }
    for (k, v) in env.iter().chain(flags) {
        set_path(&mut value, k, v.clone())?;
    }
    let cfg: PipelineConfig =
        serde_json::from_value(value).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}
