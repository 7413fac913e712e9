//! Flat `key = value` config files shared by the dataset builder, trainers, and CLI.
//!
//! Format: one `key = value` pair per line; `#` starts a comment; blank lines ignored.
//! Consumers declare their full key set up front so typos fail loudly instead of
//! silently falling back to defaults.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::NaiveDate;

use crate::error::{CoreError, Result};

#[derive(Debug, Clone, Default)]
pub struct KvConfig {
    origin: String,
    entries: BTreeMap<String, String>,
}

impl KvConfig {
    pub fn parse_str(text: &str, origin: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw_line) in text.lines().enumerate() {
            let line = match raw_line.find('#') {
                Some(pos) => &raw_line[..pos],
                None => raw_line,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| CoreError::Parse {
                path: origin.to_string(),
                line: i + 1,
                message: format!("expected `key = value`, got {raw_line:?}"),
            })?;
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if key.is_empty() {
                return Err(CoreError::Parse {
                    path: origin.to_string(),
                    line: i + 1,
                    message: "empty key".into(),
                });
            }
            if entries.insert(key.clone(), value).is_some() {
                return Err(CoreError::Parse {
                    path: origin.to_string(),
                    line: i + 1,
                    message: format!("duplicate key {key:?}"),
                });
            }
        }
        Ok(KvConfig {
            origin: origin.to_string(),
            entries,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
        Self::parse_str(&text, &path.display().to_string())
    }

    /// Rejects any key outside `allowed` — surfaces config typos immediately.
    pub fn expect_keys(&self, allowed: &[&str]) -> Result<()> {
        for key in self.entries.keys() {
            if !allowed.contains(&key.as_str()) {
                return Err(CoreError::Validation(format!(
                    "unknown config key {key:?} in {} (allowed: {})",
                    self.origin,
                    allowed.join(", ")
                )));
            }
        }
        Ok(())
    }

    pub fn entries(&self) -> &BTreeMap<String, String> {
        &self.entries
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|s| s.as_str())
    }

    fn parse_with<T, F: FnOnce(&str) -> Option<T>>(&self, key: &str, f: F, ty: &str) -> Result<Option<T>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some(v) => f(v).map(Some).ok_or_else(|| {
                CoreError::Validation(format!(
                    "config key {key:?} in {}: {v:?} is not a valid {ty}",
                    self.origin
                ))
            }),
        }
    }

    pub fn get_u64(&self, key: &str) -> Result<Option<u64>> {
        self.parse_with(key, |v| v.parse().ok(), "integer")
    }

    pub fn get_usize(&self, key: &str) -> Result<Option<usize>> {
        self.parse_with(key, |v| v.parse().ok(), "integer")
    }

    pub fn get_f64(&self, key: &str) -> Result<Option<f64>> {
        self.parse_with(key, |v| v.parse().ok(), "number")
    }

    pub fn get_bool(&self, key: &str) -> Result<Option<bool>> {
        self.parse_with(
            key,
            |v| match v {
                "true" | "on" | "1" | "yes" => Some(true),
                "false" | "off" | "0" | "no" => Some(false),
                _ => None,
            },
            "boolean",
        )
    }

    pub fn get_date(&self, key: &str) -> Result<Option<NaiveDate>> {
        self.parse_with(
            key,
            |v| NaiveDate::parse_from_str(v, "%Y-%m-%d").ok(),
            "date (YYYY-MM-DD)",
        )
    }
}
