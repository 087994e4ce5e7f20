//! Flat `key=value` configuration files.
//!
//! One entry per line; blank lines and lines starting with `#` are skipped.
//! Keys use the same spelling as the long command-line flags, with either
//! `-` or `_` as separator.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("i/o error reading config: {0}")]
    Io(#[from] std::io::Error),
    #[error("config line {line}: expected `key=value`")]
    Syntax { line: usize },
    #[error("config line {line}: duplicate key `{key}`")]
    Duplicate { line: usize, key: String },
    #[error("invalid value `{value}` for `{key}`: {reason}")]
    Value {
        key: String,
        value: String,
        reason: String,
    },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FlatConfig {
    entries: BTreeMap<String, String>,
}

fn normalize_key(key: &str) -> String {
    key.trim().replace('-', "_")
}

impl FlatConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or(ConfigError::Syntax { line: idx + 1 })?;
            let key = normalize_key(key);
            if key.is_empty() {
                return Err(ConfigError::Syntax { line: idx + 1 });
            }
            if entries.insert(key.clone(), value.trim().to_string()).is_some() {
                return Err(ConfigError::Duplicate {
                    line: idx + 1,
                    key,
                });
            }
        }
        Ok(FlatConfig { entries })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(&normalize_key(key)).map(String::as_str)
    }

    pub fn get<T>(&self, key: &str) -> Result<Option<T>, ConfigError>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        self.raw(key)
            .map(|value| {
                value.parse().map_err(|e: T::Err| ConfigError::Value {
                    key: key.to_string(),
                    value: value.to_string(),
                    reason: e.to_string(),
                })
            })
            .transpose()
    }

    /// Inserts or replaces one entry.
    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.entries.insert(normalize_key(key), value.into());
    }

    /// Entries of `other` win over entries of `self`.
    pub fn overlay(mut self, other: &FlatConfig) -> Self {
        for (k, v) in &other.entries {
            self.entries.insert(k.clone(), v.clone());
        }
        self
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Fails on the first key not in `allowed`.
    pub fn check_keys(&self, allowed: &[&str]) -> Result<(), ConfigError> {
        let allowed: Vec<String> = allowed.iter().map(|k| normalize_key(k)).collect();
        match self.keys().find(|k| !allowed.iter().any(|a| a == k)) {
            Some(unknown) => Err(ConfigError::UnknownKey(unknown.to_string())),
            None => Ok(()),
        }
    }
}
