//! Pipeline configuration files and the metadata block written with every
//! output.

use std::path::Path;

use anyhow::{bail, Context, Result};
use ppf_core::pipeline::PipelineConfig;
use serde_json::{json, Value};

/// Recursively overlays `patch` onto `base`. Objects merge key by key;
/// anything else replaces.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn known_keys(base: &Value, patch: &Value, prefix: &str) -> Result<()> {
    if let (Value::Object(b), Value::Object(p)) = (base, patch) {
        for (k, v) in p {
            let Some(inner) = b.get(k) else {
                bail!("unknown config key `{prefix}{k}`");
            };
            known_keys(inner, v, &format!("{prefix}{k}."))?;
        }
    }
    Ok(())
}

/// Parses a YAML or JSON document. A full metadata block (or its
/// `config` member) from an earlier run is accepted as well as a bare,
/// possibly partial, configuration; so is a whole results file, whose
/// first line is its metadata block.
pub fn parse_config(text: &str) -> Result<PipelineConfig> {
    let first = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
    let mut doc: Value = match serde_json::from_str::<Value>(first) {
        Ok(v) if v.get("metadata").is_some() => v,
        _ => serde_yaml::from_str(text).context("config is not valid YAML/JSON")?,
    };
    if doc.is_null() {
        doc = json!({});
    }
    if let Some(meta) = doc.get_mut("metadata") {
        doc = meta.take();
    }
    if let Some(cfg) = doc.get_mut("config") {
        doc = cfg.take();
    }
    if !doc.is_object() {
        bail!("config must be a mapping");
    }
    let mut base = serde_json::to_value(PipelineConfig::default())?;
    known_keys(&base, &doc, "")?;
    merge(&mut base, doc);
    let cfg: PipelineConfig = serde_json::from_value(base).context("invalid config value")?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    match path {
        None => Ok(PipelineConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            parse_config(&text).with_context(|| format!("config {}", p.display()))
        }
    }
}

/// `{"metadata": …}` object written first on every machine-readable output.
pub fn metadata(command: &str, config: &PipelineConfig, extra: Value) -> Value {
    let mut m = json!({
        "tool": "ppf",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "config": config,
        "depth_metric": "camera_z",
    });
    merge(&mut m, extra);
    json!({ "metadata": m })
}
