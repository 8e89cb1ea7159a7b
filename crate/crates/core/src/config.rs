//! Flat `key = value` configuration text.
//!
//! Blank lines and lines starting with `#` are ignored. Later duplicates win.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, RecordError, RecordErrorKind, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    // key -> (source line, 0 for programmatic overrides; raw value)
    entries: BTreeMap<String, (usize, String)>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(RecordError {
                    line: idx + 1,
                    kind: RecordErrorKind::Malformed(format!("expected key = value, got `{line}`")),
                }
                .into());
            };
            let key = key.trim();
            if key.is_empty() {
                return Err(RecordError {
                    line: idx + 1,
                    kind: RecordErrorKind::Malformed("empty key".into()),
                }
                .into());
            }
            entries.insert(key.to_string(), (idx + 1, value.trim().to_string()));
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(_, v)| v.as_str())
    }

    /// Parses `key` if present; a bad value reports the line it came from.
    pub fn get_parsed<T>(&self, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: fmt::Display,
    {
        match self.entries.get(key) {
            None => Ok(None),
            Some((line, value)) => value.parse().map(Some).map_err(|e: T::Err| {
                RecordError {
                    line: *line,
                    kind: RecordErrorKind::Malformed(format!("`{key}` = `{value}`: {e}")),
                }
                .into()
            }),
        }
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl ToString) {
        self.entries.insert(key.into(), (0, value.to_string()));
    }

    /// Overlays `other` on top of `self`.
    pub fn merge(&mut self, other: &KeyValues) {
        for (k, v) in &other.entries {
            self.entries.insert(k.clone(), v.clone());
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries
            .iter()
            .map(|(k, (_, v))| (k.as_str(), v.as_str()))
    }

    pub fn to_map(&self) -> BTreeMap<String, String> {
        self.iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect()
    }
}

impl fmt::Display for KeyValues {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in self.iter() {
            writeln!(f, "{k} = {v}")?;
        }
        Ok(())
    }
}
