//! Artifact envelopes and CSV tables.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const TOOL: &str = "smoothfit";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    NotConverged,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Artifact<T> {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_hash: String,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
    pub data: T,
}

impl<T> Artifact<T> {
    pub fn new(command: &str, config_hash: &str, status: Status, data: T) -> Self {
        Artifact {
            tool: TOOL.into(),
            version: VERSION.into(),
            command: command.into(),
            config_hash: config_hash.into(),
            status,
            warning: None,
            data,
        }
    }

    pub fn with_warning(self, warning: Option<String>) -> Self {
        Artifact { warning, ..self }
    }
}

/// Hex SHA-256 of the compact JSON encoding of `value`.
pub fn config_hash<T: Serialize>(value: &T) -> Result<String> {
    Ok(hex::encode(Sha256::digest(serde_json::to_vec(value)?)))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::InvalidArgument(format!("cannot read artifact {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::InvalidArgument(format!("corrupted artifact {}: {e}", path.display())))
}

/// Comma-separated table with a fixed header.
pub struct Table {
    width: usize,
    text: String,
}

impl Table {
    pub fn new(header: &[String]) -> Self {
        let mut t = Table { width: header.len(), text: String::new() };
        t.text.push_str(&header.join(","));
        t.text.push('\n');
        t
    }

    pub fn row(&mut self, cells: &[String]) {
        debug_assert_eq!(cells.len(), self.width);
        self.text.push_str(&cells.join(","));
        self.text.push('\n');
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, &self.text)?;
        Ok(())
    }
}

pub fn axis_columns(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}{i}")).collect()
}

pub fn num(x: f64) -> String {
    format!("{x:?}")
}

pub fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

pub fn nums(xs: &[f64]) -> Vec<String> {
    xs.iter().map(|&x| num(x)).collect()
}

/// Quotes a text cell when it contains a separator.
pub fn text(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        let mut q = String::from("\"");
        for c in s.chars() {
            if c == '"' {
                q.push('"');
            }
            q.push(c);
        }
        q.push('"');
        q
    } else {
        s.to_string()
    }
}
