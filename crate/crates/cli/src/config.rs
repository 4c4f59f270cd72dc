use std::path::Path;

use anyhow::{anyhow, Context, Result};
use emcomm_core::training::TrainConfig;

/// A problem with the invocation or configuration (exit code 2).
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow!(UsageError(msg.into()))
}

/// Parses `KEY=VALUE` where VALUE is a TOML literal; bare words are strings.
fn parse_override(spec: &str) -> Result<(Vec<String>, toml::Value)> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| usage(format!("override `{spec}` is not KEY=VALUE")))?;
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    Ok((key.trim().split('.').map(str::to_string).collect(), value))
}

/// A JSON file is either a bare config or a run's `manifest.json`.
fn json_table(text: &str, path: &Path) -> Result<toml::Table> {
    let mut v: serde_json::Value =
        serde_json::from_str(text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    if let Some(cfg) = v.get_mut("config") {
        v = cfg.take();
    }
    let cfg: TrainConfig = serde_json::from_value(v).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    Ok(toml::from_str(&cfg.to_toml()).expect("config round-trips through TOML"))
}

/// Reads a TOML or JSON config (or defaults when `path` is `None`), applies
/// `KEY=VALUE` overrides (dotted keys reach nested tables), and validates.
pub fn load(path: Option<&Path>, overrides: &[String], seed: Option<u64>) -> Result<TrainConfig> {
    let mut table = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            if p.extension().is_some_and(|e| e == "json") {
                json_table(&text, p)?
            } else {
                toml::from_str::<toml::Table>(&text).map_err(|e| usage(format!("{}: {e}", p.display())))?
            }
        }
        None => toml::Table::new(),
    };
    let mut all: Vec<(Vec<String>, toml::Value)> = overrides.iter().map(|s| parse_override(s)).collect::<Result<_>>()?;
    if let Some(s) = seed {
        all.push((vec!["seed".into()], toml::Value::Integer(s as i64)));
    }
    for (key, value) in all {
        let (last, parents) = key.split_last().expect("non-empty key");
        let mut t = &mut table;
        for p in parents {
            t = t
                .entry(p.clone())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                .as_table_mut()
                .ok_or_else(|| usage(format!("`{p}` is not a table")))?;
        }
        t.insert(last.clone(), value);
    }
    let text = toml::to_string(&table).expect("table serializes");
    TrainConfig::from_toml(&text).map_err(|e| usage(e.to_string()))
}
