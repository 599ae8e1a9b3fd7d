//! Flat `key=value` text used for configs and checkpoint headers.
//!
//! Blank lines and lines starting with `#` are ignored. Keys are unique.

use std::collections::BTreeMap;
use std::str::FromStr;

use crate::error::{MewError, Result};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct KeyValues {
    entries: BTreeMap<String, String>,
}

impl KeyValues {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                MewError::Config(format!("line {}: expected key=value, got `{line}`", lineno + 1))
            })?;
            let k = k.trim().to_string();
            if entries.insert(k.clone(), v.trim().to_string()).is_some() {
                return Err(MewError::Config(format!("line {}: duplicate key `{k}`", lineno + 1)));
            }
        }
        Ok(Self { entries })
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Parses `key` if present.
    pub fn get_parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| MewError::Config(format!("`{key}={v}`: {e}")))
            })
            .transpose()
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        self.get_parsed(key)?
            .ok_or_else(|| MewError::Config(format!("missing key `{key}`")))
    }

    /// Comma-separated list.
    pub fn get_list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key)
            .map(|v| {
                v.split(',')
                    .map(|p| {
                        p.trim()
                            .parse::<T>()
                            .map_err(|e| MewError::Config(format!("`{key}={v}`: {e}")))
                    })
                    .collect()
            })
            .transpose()
    }

    /// Serialized form; keys sorted, so output is canonical.
    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }
}

pub fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_round_trip() {
        let kv = KeyValues::parse("# c\nlr = 0.001\n\nbranches=hw,dw\n").unwrap();
        assert_eq!(kv.get("lr"), Some("0.001"));
        assert_eq!(kv.require::<f64>("lr").unwrap(), 1e-3);
        assert_eq!(KeyValues::parse(&kv.to_text()).unwrap(), kv);
        assert!(KeyValues::parse("a=1\na=2").is_err());
        assert!(KeyValues::parse("novalue").is_err());
        assert!(kv.require::<f64>("epochs").is_err());
    }
}
