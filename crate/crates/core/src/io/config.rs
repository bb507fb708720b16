use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::harness::ExperimentConfig;

/// A parsed document plus the dotted paths of every field filled in from a
/// default.
#[derive(Clone, Debug, PartialEq)]
pub struct Parsed<T> {
    pub value: T,
    pub defaults_applied: Vec<String>,
}

fn join(path: &str, key: &str) -> String {
    if path.is_empty() {
        key.to_string()
    } else {
        format!("{path}.{key}")
    }
}

fn missing_paths(input: &Value, full: &Value, path: &str, out: &mut Vec<String>) {
    match (input, full) {
        (Value::Object(a), Value::Object(b)) => {
            for (k, v) in b {
                match a.get(k) {
                    Some(inner) => missing_paths(inner, v, &join(path, k), out),
                    None => out.push(join(path, k)),
                }
            }
        }
        (Value::Array(a), Value::Array(b)) if a.len() == b.len() => {
            for (i, (x, y)) in a.iter().zip(b).enumerate() {
                missing_paths(x, y, &join(path, &i.to_string()), out);
            }
        }
        _ => {}
    }
}

fn byte_offset(text: &str, line: usize, column: usize) -> u64 {
    let before: usize = text.split_inclusive('\n').take(line.saturating_sub(1)).map(str::len).sum();
    (before + column) as u64
}

/// Parses any JSON document type, rejecting unknown keys with their path.
pub fn parse_document<T: DeserializeOwned + Serialize>(text: &str) -> Result<Parsed<T>> {
    let input: Value = serde_json::from_str(text).map_err(|e| Error::Format {
        offset: byte_offset(text, e.line(), e.column()),
        message: e.to_string(),
    })?;
    let value: T = serde_path_to_error::deserialize(&input).map_err(|e| {
        let path = e.path().to_string();
        Error::Config {
            path: if path == "." { String::new() } else { path },
            message: e.into_inner().to_string(),
        }
    })?;
    let full = serde_json::to_value(&value)?;
    let mut defaults_applied = Vec::new();
    missing_paths(&input, &full, "", &mut defaults_applied);
    Ok(Parsed { value, defaults_applied })
}

/// Parses and validates an experiment config.
pub fn parse_config(text: &str) -> Result<Parsed<ExperimentConfig>> {
    let parsed = parse_document::<ExperimentConfig>(text)?;
    parsed.value.validate()?;
    Ok(parsed)
}

pub fn config_to_string(config: &ExperimentConfig) -> Result<String> {
    Ok(serde_json::to_string_pretty(config)?)
}
