//! Flat `key=value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Keys are matched
//! against the field names of the config structs that consume them.

use std::collections::BTreeMap;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Parsed key/value pairs with the line each came from.
#[derive(Clone, Debug, Default)]
pub struct KeyValues {
    entries: BTreeMap<String, (usize, String)>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                message: format!("expected key=value, got {line:?}"),
            })?;
            let key = k.trim().to_string();
            if entries.insert(key.clone(), (i + 1, v.trim().to_string())).is_some() {
                return Err(Error::Parse { line: i + 1, message: format!("duplicate key {key:?}") });
            }
        }
        Ok(Self { entries })
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, usize, &str)> {
        self.entries.iter().map(|(k, (line, v))| (k.as_str(), *line, v.as_str()))
    }
}

/// Parses a config value, attributing failures to `line`.
pub fn parse_value<T: FromStr>(key: &str, value: &str, line: usize) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| Error::Parse { line, message: format!("{key}: {e}") })
}

pub fn parse_list<T: FromStr>(key: &str, value: &str, line: usize) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_value(key, s, line))
        .collect()
}

/// Implemented by config structs that accept `key=value` assignments.
pub trait Configurable {
    /// Applies one assignment. Returns `Ok(false)` for keys it does not own.
    fn set(&mut self, key: &str, value: &str, line: usize) -> Result<bool>;

    /// Current values as ordered `(key, value)` pairs.
    fn to_pairs(&self) -> Vec<(&'static str, String)>;
}

/// Applies every pair to the first target that owns its key. Unknown keys
/// are an error.
pub fn apply(kv: &KeyValues, targets: &mut [&mut dyn Configurable]) -> Result<()> {
    'outer: for (key, line, value) in kv.iter() {
        for t in targets.iter_mut() {
            if t.set(key, value, line)? {
                continue 'outer;
            }
        }
        return Err(Error::Parse { line, message: format!("unknown config key {key:?}") });
    }
    Ok(())
}
