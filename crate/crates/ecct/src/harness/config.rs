//! Flat `key = value` configuration files with `#` comments.

use super::HarnessError;
use std::collections::HashMap;

#[derive(Debug, Clone, Default)]
pub struct FlatConfig {
    values: HashMap<String, String>,
}

impl FlatConfig {
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let mut values = HashMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(HarnessError::ParseError {
                    line: lineno + 1,
                    reason: format!("expected `key = value`, found {line:?}"),
                });
            };
            let key = key.trim();
            if key.is_empty() {
                return Err(HarnessError::ParseError {
                    line: lineno + 1,
                    reason: "empty key".into(),
                });
            }
            values.insert(key.to_string(), value.trim().to_string());
        }
        Ok(FlatConfig { values })
    }

    pub fn load(path: &std::path::Path) -> Result<Self, HarnessError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn get_parse<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>, HarnessError> {
        match self.values.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse::<T>().map(Some).map_err(|_| {
                HarnessError::ConfigMismatch(format!("cannot parse {key} = {raw:?}"))
            }),
        }
    }

    /// Comma-separated list value.
    pub fn get_list<T: std::str::FromStr>(&self, key: &str) -> Result<Option<Vec<T>>, HarnessError> {
        match self.values.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| {
                    s.parse::<T>().map_err(|_| {
                        HarnessError::ConfigMismatch(format!(
                            "cannot parse element {s:?} of {key} = {raw:?}"
                        ))
                    })
                })
                .collect::<Result<Vec<_>, _>>()
                .map(Some),
        }
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.values.keys().map(String::as_str)
    }
}
