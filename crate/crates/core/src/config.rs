//! Plain `key = value` configuration text.
//!
//! One setting per line; blank lines and lines starting with `#` are
//! ignored. Keys are unique. Typed structs read their keys through
//! [`KvReader`], which rejects any key left unread.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Parses `key = value` lines into a sorted map.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::config(format!("line {}", n + 1), format!("expected `key = value`, got `{line}`")));
        };
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(Error::config(format!("line {}", n + 1), "empty key"));
        }
        if out.insert(k.to_string(), v.to_string()).is_some() {
            return Err(Error::config(k, "duplicate key"));
        }
    }
    Ok(out)
}

/// Renders pairs as `key = value` lines, in the given order.
pub fn render_kv<K: Display, V: Display>(pairs: impl IntoIterator<Item = (K, V)>) -> String {
    pairs.into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}

/// Typed, consuming access to a parsed key/value map.
#[derive(Debug, Default)]
pub struct KvReader {
    entries: BTreeMap<String, String>,
}

impl KvReader {
    pub fn new(entries: BTreeMap<String, String>) -> Self {
        Self { entries }
    }

    pub fn parse(text: &str) -> Result<Self> {
        parse_kv(text).map(Self::new)
    }

    /// Removes and parses `key`; `Ok(None)` when absent.
    pub fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        match self.entries.remove(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|e| Error::config(key, format!("cannot parse `{raw}`: {e}"))),
        }
    }

    /// Overwrites `slot` when `key` is present.
    pub fn set<T: FromStr>(&mut self, key: &str, slot: &mut T) -> Result<()>
    where
        T::Err: Display,
    {
        if let Some(v) = self.take(key)? {
            *slot = v;
        }
        Ok(())
    }

    pub fn require<T: FromStr>(&mut self, key: &str) -> Result<T>
    where
        T::Err: Display,
    {
        self.take(key)?.ok_or_else(|| Error::config(key, "missing"))
    }

    /// Fails if any key was never read.
    pub fn finish(self) -> Result<()> {
        match self.entries.keys().next() {
            None => Ok(()),
            Some(k) => Err(Error::config(k.clone(), "unknown key")),
        }
    }
}
