//! Flat `key=value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Keys are unique;
//! later assignments override earlier ones. Rendering sorts keys so equal
//! configurations produce identical text.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct KvConfig {
    entries: BTreeMap<String, String>,
}

impl KvConfig {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", n + 1)))?;
            let k = k.trim();
            if k.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", n + 1)));
            }
            entries.insert(k.to_string(), v.trim().to_string());
        }
        Ok(KvConfig { entries })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        self.raw(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| Error::Config(format!("{key} = {v:?}: {e}")))
            })
            .transpose()
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn set(&mut self, key: &str, value: impl Display) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    /// Apply every entry of `other` over this config.
    pub fn merge(&mut self, other: &KvConfig) {
        for (k, v) in &other.entries {
            self.entries.insert(k.clone(), v.clone());
        }
    }

    /// View for one scope: unscoped keys, overridden by `scope.key` entries
    /// with the prefix stripped. Keys of other scopes pass through unchanged.
    pub fn scoped(&self, scope: &str) -> KvConfig {
        let prefix = format!("{scope}.");
        let mut out = self.clone();
        for (k, v) in &self.entries {
            if let Some(rest) = k.strip_prefix(&prefix) {
                out.entries.insert(rest.to_string(), v.clone());
            }
        }
        out
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scoped_view_overrides() {
        let cfg = KvConfig::parse("epochs=5\npretrain.epochs=20\nfinetune.lr=1\n").unwrap();
        let p = cfg.scoped("pretrain");
        assert_eq!(p.raw("epochs"), Some("20"));
        assert_eq!(cfg.scoped("finetune").raw("epochs"), Some("5"));
        assert_eq!(cfg.scoped("finetune").raw("lr"), Some("1"));
    }

    #[test]
    fn parse_and_render() {
        let cfg = KvConfig::parse("# scene\nn_points = 2048\n\nseed=7\nseed=9\n").unwrap();
        assert_eq!(cfg.get::<usize>("n_points").unwrap(), Some(2048));
        assert_eq!(cfg.get_or("seed", 0u64).unwrap(), 9);
        assert_eq!(cfg.get_or("missing", 1.5f64).unwrap(), 1.5);
        assert_eq!(cfg.to_text(), "n_points=2048\nseed=9\n");
        assert!(cfg.get::<usize>("nope").unwrap().is_none());
        assert!(KvConfig::parse("novalue\n").is_err());
        let bad = KvConfig::parse("n=abc").unwrap();
        assert!(bad.get::<usize>("n").is_err());
    }
}
