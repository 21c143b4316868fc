//! Config loading: defaults, then the TOML file, then `--set` overrides.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};
use toml::{Table, Value};

use crate::UsageError;

/// Parses `KEY=VALUE`. The value is read as a TOML value when possible and
/// as a bare string otherwise.
pub fn parse_override(raw: &str) -> Result<(String, Value), UsageError> {
    let (key, val) = raw
        .split_once('=')
        .ok_or_else(|| UsageError(format!("override {raw:?} is not KEY=VALUE")))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(UsageError(format!("bad override key {key:?}")));
    }
    let val = val.trim();
    let value = match toml::from_str::<Table>(&format!("v = {val}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => Value::String(val.to_string()),
    };
    Ok((key.to_string(), value))
}

fn apply(table: &mut Table, key: &str, value: Value) -> Result<(), UsageError> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().expect("non-empty key");
    let mut cur = table;
    for p in parts {
        let entry = cur.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| UsageError(format!("{key}: {p} is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

/// The effective config for one subcommand.
pub fn resolve<C: Serialize + DeserializeOwned>(file: Option<&Path>, overrides: &[(String, Value)]) -> Result<C, UsageError> {
    let mut table = match file {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
            toml::from_str::<Table>(&text).map_err(|e| UsageError(format!("malformed config {}: {e}", path.display())))?
        }
        None => Table::new(),
    };
    for (k, v) in overrides {
        apply(&mut table, k, v.clone())?;
    }
    Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| UsageError(format!("invalid config: {}", e.message())))
}

pub fn to_toml<C: Serialize>(cfg: &C) -> anyhow::Result<String> {
    Ok(toml::to_string(cfg)?)
}

/// SHA-256 of the canonical TOML rendering, as lowercase hex.
pub fn config_hash(canonical: &str) -> String {
    Sha256::digest(canonical.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, Default, PartialEq, Serialize, Deserialize)]
    #[serde(deny_unknown_fields, default)]
    struct Inner {
        k: usize,
        name: String,
    }

    #[derive(Debug, Default, PartialEq, Serialize, Deserialize)]
    #[serde(deny_unknown_fields, default)]
    struct Outer {
        trials: usize,
        xs: Vec<f64>,
        inner: Inner,
    }

    #[test]
    fn overrides_reach_nested_keys() {
        let sets = ["trials=3", "inner.k=7", "inner.name=abc", "xs=[1, 2.5]"].map(|s| parse_override(s).unwrap());
        let c: Outer = resolve(None, &sets).unwrap();
        assert_eq!(
            c,
            Outer {
                trials: 3,
                xs: vec![1.0, 2.5],
                inner: Inner { k: 7, name: "abc".into() }
            }
        );
    }

    #[test]
    fn unknown_keys_and_missing_files_are_usage_errors() {
        assert!(resolve::<Outer>(None, &[parse_override("nope=1").unwrap()]).is_err());
        assert!(resolve::<Outer>(Some(Path::new("/nonexistent/x.toml")), &[]).is_err());
        assert!(parse_override("novalue").is_err());
        assert!(parse_override("a..b=1").is_err());
    }

    #[test]
    fn hash_is_stable_hex() {
        let h = config_hash("a = 1\n");
        assert_eq!(h.len(), 64);
        assert_eq!(h, config_hash("a = 1\n"));
        assert_ne!(h, config_hash("a = 2\n"));
    }
}
