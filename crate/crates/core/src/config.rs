//! TOML run configuration with `key.path=value` overrides.
//!
//! Unknown keys are errors. Errors name the full key path and, where the
//! parser knows it, the line and column.

use std::path::Path;

use toml::{Table, Value};

use crate::error::{Error, Result};
use crate::simulator::{DataSource, ProblemSpec, RunSpec};

/// Parses a config document and applies `overrides` on top of it.
pub fn parse_run_spec(text: &str, overrides: &[String]) -> Result<RunSpec> {
    if overrides.is_empty() {
        return deserialize(text);
    }
    let mut table: Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    for kv in overrides {
        apply_override(&mut table, kv)?;
    }
    let merged = toml::to_string(&table).map_err(|e| Error::Config(e.to_string()))?;
    deserialize(&merged)
}

fn deserialize(text: &str) -> Result<RunSpec> {
    let de = toml::Deserializer::parse(text).map_err(|e| Error::Config(e.to_string()))?;
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        if path.is_empty() || path == "." {
            Error::Config(inner.to_string())
        } else {
            Error::Config(format!("at `{path}`: {inner}"))
        }
    })
}

/// Reads `path`, applies overrides and resolves relative data paths
/// against the config file's directory.
pub fn load_run_spec(path: impl AsRef<Path>, overrides: &[String]) -> Result<RunSpec> {
    let path = path.as_ref();
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut spec = parse_run_spec(&text, overrides).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        other => other,
    })?;
    if let Some(dir) = path.parent() {
        resolve_paths(&mut spec, dir);
    }
    Ok(spec)
}

fn resolve_paths(spec: &mut RunSpec, dir: &Path) {
    let data = match &mut spec.problem {
        ProblemSpec::Logistic { data, .. } | ProblemSpec::Mlp { data, .. } => data,
        ProblemSpec::Quadratic { .. } => return,
    };
    if data.source != DataSource::Idx {
        return;
    }
    for p in [
        &mut data.images,
        &mut data.labels,
        &mut data.test_images,
        &mut data.test_labels,
    ]
    .into_iter()
    .flatten()
    {
        if p.is_relative() {
            *p = dir.join(&*p);
        }
    }
}

/// Sets `a.b.c = value` in `table`. The value is read as a TOML literal
/// and falls back to a plain string.
pub fn apply_override(table: &mut Table, kv: &str) -> Result<()> {
    let (key, raw) = kv
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{kv}` is not key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad override key `{key}`")));
    }
    let value = parse_value(raw);
    let (last, parents) = parts.split_last().expect("split yields at least one part");
    let mut cur = table;
    for (depth, part) in parents.iter().enumerate() {
        let entry = cur
            .entry(part.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        cur = match entry {
            Value::Table(t) => t,
            _ => {
                return Err(Error::Config(format!(
                    "override `{key}`: `{}` is not a table",
                    parts[..=depth].join(".")
                )))
            }
        };
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

fn parse_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}
