//! `key=value` overrides applied on top of serializable config structs.

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

/// Applies `key=value` overrides to any config that round-trips through TOML.
///
/// Values are parsed as TOML scalars when possible (`k=5`, `threshold=0.4`,
/// `flag=true`) and fall back to plain strings (`granularity=span`). Keys
/// outside `allowed` are rejected.
pub fn apply_overrides<T: Serialize + DeserializeOwned>(config: &T, overrides: &[String], allowed: &[&str]) -> Result<T> {
    let mut table = toml::Table::try_from(config).map_err(|e| Error::Config(e.to_string()))?;
    for assignment in overrides {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected key=value, got `{assignment}`")))?;
        let key = key.trim();
        if !allowed.contains(&key) {
            return Err(Error::Config(format!(
                "unknown config key `{key}` (expected one of: {})",
                allowed.join(", ")
            )));
        }
        // String fields take the raw text, so ids such as `inf` stay strings.
        let value = match table.get(key) {
            Some(toml::Value::String(_)) => toml::Value::String(raw.trim().to_string()),
            _ => parse_scalar(raw.trim()),
        };
        table.insert(key.to_string(), value);
    }
    toml::Value::Table(table)
        .try_into()
        .map_err(|e| Error::Config(e.to_string()))
}

/// Applies the keys of a TOML document on top of `config`.
pub fn merge_toml<T: Serialize + DeserializeOwned>(config: &T, content: &str, allowed: &[&str]) -> Result<T> {
    let overlay: toml::Table = content.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    let mut table = toml::Table::try_from(config).map_err(|e| Error::Config(e.to_string()))?;
    for (key, value) in overlay {
        if !allowed.contains(&key.as_str()) {
            return Err(Error::Config(format!("unknown config key `{key}`")));
        }
        table.insert(key, value);
    }
    toml::Value::Table(table)
        .try_into()
        .map_err(|e| Error::Config(e.to_string()))
}

fn parse_scalar(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}
