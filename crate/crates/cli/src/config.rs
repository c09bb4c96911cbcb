//! TOML configuration with flag overrides.

use std::path::Path;

use serde::de::DeserializeOwned;
use toml::{Table, Value};

use crate::error::{CliError, CliResult};
use crate::manifest::{read_input, InputDigest};

/// Parse an optional TOML file into a table, recording its digest.
pub fn load_table(path: Option<&Path>) -> CliResult<(Table, Option<InputDigest>)> {
    let Some(path) = path else {
        return Ok((Table::new(), None));
    };
    let (bytes, digest) = read_input("config", path)?;
    let text = String::from_utf8(bytes)
        .map_err(|_| CliError::Config(format!("{} is not UTF-8", path.display())))?;
    let table: Table = text
        .parse()
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    Ok((table, Some(digest)))
}

/// Set `table[keys...] = value`, creating intermediate tables.
pub fn set_path(table: &mut Table, keys: &[&str], value: Value) -> CliResult<()> {
    let (last, parents) = keys.split_last().expect("non-empty key path");
    let mut t = table;
    for k in parents {
        t = t
            .entry(k.to_string())
            .or_insert_with(|| Value::Table(Table::new()))
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("`{k}` must be a table")))?;
    }
    t.insert(last.to_string(), value);
    Ok(())
}

pub fn set_opt<T: Into<Value>>(table: &mut Table, keys: &[&str], value: Option<T>) -> CliResult<()> {
    match value {
        Some(v) => set_path(table, keys, v.into()),
        None => Ok(()),
    }
}

pub fn int(v: usize) -> Value {
    Value::Integer(v as i64)
}

/// Seed from the flag, else from `table.seed`; one of them is required.
pub fn resolve_seed(table: &mut Table, flag: Option<u64>) -> CliResult<u64> {
    if let Some(s) = flag {
        table.insert("seed".into(), Value::Integer(s as i64));
        return Ok(s);
    }
    match table.get("seed") {
        Some(Value::Integer(s)) if *s >= 0 => Ok(*s as u64),
        Some(other) => Err(CliError::Config(format!("seed must be a nonnegative integer, got {other}"))),
        None => Err(CliError::Config(
            "a seed is required: pass --seed or set `seed` in the config".into(),
        )),
    }
}

pub fn decode<T: DeserializeOwned>(table: Table, what: &str) -> CliResult<T> {
    Value::Table(table)
        .try_into()
        .map_err(|e| CliError::Config(format!("{what}: {e}")))
}

/// Comma-separated floats.
pub fn parse_floats(s: &str) -> CliResult<Vec<f64>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Config(format!("not a number: `{t}`")))
        })
        .collect()
}
