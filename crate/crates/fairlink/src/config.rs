//! `key = value` configuration files.
//!
//! One assignment per line, `#` starts a comment, keys are snake_case.
//! Commands reject keys they do not document, and every run writes its fully
//! resolved configuration (defaults included) next to its outputs.

use crate::error::{Error, Result};
use std::collections::BTreeMap;
use std::path::Path;

/// Parsed key-value configuration with typed accessors.
#[derive(Debug, Clone, Default)]
pub struct KvConfig {
    map: BTreeMap<String, String>,
}

impl KvConfig {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::parse(source, lineno + 1, "expected `key = value`"));
            };
            let key = k.trim().to_string();
            if key.is_empty() {
                return Err(Error::parse(source, lineno + 1, "empty key"));
            }
            if map.insert(key.clone(), v.trim().to_string()).is_some() {
                return Err(Error::parse(
                    source,
                    lineno + 1,
                    format!("duplicate key {key:?}"),
                ));
            }
        }
        Ok(KvConfig { map })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.map.insert(key.to_string(), value.into());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(|s| s.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::validation(format!("missing required key {key:?}")))
    }

    /// Rejects any key outside the allowed set.
    pub fn check_known(&self, allowed: &[&str]) -> Result<()> {
        for key in self.map.keys() {
            if !allowed.contains(&key.as_str()) {
                return Err(Error::validation(format!(
                    "unknown key {key:?} (allowed: {})",
                    allowed.join(", ")
                )));
            }
        }
        Ok(())
    }

    fn typed<T: std::str::FromStr>(&self, key: &str, raw: &str) -> Result<T> {
        raw.parse().map_err(|_| {
            Error::validation(format!(
                "key {key:?}: cannot parse {raw:?} as {}",
                std::any::type_name::<T>()
            ))
        })
    }

    pub fn req<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.require(key)?;
        self.typed(key, raw)
    }

    pub fn get_or<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.get(key) {
            Some(raw) => self.typed(key, raw),
            None => Ok(default),
        }
    }

    /// Comma-separated list value.
    pub fn list<T: std::str::FromStr>(&self, key: &str) -> Result<Vec<T>> {
        let raw = self.require(key)?;
        raw.split(',')
            .map(|f| self.typed(key, f.trim()))
            .collect()
    }

    /// Canonical sorted `key = value` text, the resolved-config format.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.map {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(v);
            out.push('\n');
        }
        out
    }
}
