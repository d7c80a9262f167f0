//! Flat `key=value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Keys may appear at
//! most once. Every key must be consumed by some reader, so typos surface
//! as errors instead of silently falling back to defaults.

use std::cell::RefCell;
use std::collections::HashSet;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug)]
pub struct KvConfig {
    path: PathBuf,
    entries: Vec<(String, String, usize)>,
    used: RefCell<HashSet<String>>,
}

impl KvConfig {
    pub fn empty() -> Self {
        Self::from_pairs(Vec::<(String, String)>::new())
    }

    pub fn from_pairs<K: Into<String>, V: Into<String>>(
        pairs: impl IntoIterator<Item = (K, V)>,
    ) -> Self {
        Self {
            path: PathBuf::from("<inline>"),
            entries: pairs
                .into_iter()
                .enumerate()
                .map(|(i, (k, v))| (k.into(), v.into(), i + 1))
                .collect(),
            used: RefCell::new(HashSet::new()),
        }
    }

    pub fn parse(path: &Path, text: &str) -> Result<Self> {
        let mut entries: Vec<(String, String, usize)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::parse(path, i + 1, format!("expected key=value, got '{line}'"))
            })?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(Error::parse(path, i + 1, "empty key"));
            }
            if entries.iter().any(|(e, _, _)| e == k) {
                return Err(Error::parse(path, i + 1, format!("duplicate key '{k}'")));
            }
            entries.push((k.to_string(), v.to_string(), i + 1));
        }
        Ok(Self {
            path: path.to_path_buf(),
            entries,
            used: RefCell::new(HashSet::new()),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(path, &text)
    }

    /// Sets `key`, replacing any value read from the file.
    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        let value = value.into();
        match self.entries.iter_mut().find(|(k, _, _)| k == key) {
            Some(e) => e.1 = value,
            None => self.entries.push((key.to_string(), value, 0)),
        }
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.iter().any(|(k, _, _)| k == key)
    }

    /// Parses and consumes `key` if present.
    pub fn get<T>(&self, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        let Some((_, v, line)) = self.entries.iter().find(|(k, _, _)| k == key) else {
            return Ok(None);
        };
        self.used.borrow_mut().insert(key.to_string());
        v.parse()
            .map(Some)
            .map_err(|e| Error::parse(&self.path, *line, format!("{key}: {e}")))
    }

    pub fn get_or<T>(&self, key: &str, default: T) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    /// Fails on the first key nobody asked for.
    pub fn finish(&self) -> Result<()> {
        let used = self.used.borrow();
        match self.entries.iter().find(|(k, _, _)| !used.contains(k)) {
            Some((k, _, line)) => Err(Error::parse(
                &self.path,
                *line,
                format!("unknown key '{k}'"),
            )),
            None => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_tracks_usage() {
        let c = KvConfig::parse(Path::new("c"), "# comment\nlr = 0.5\n\nbatch_size=2\n").unwrap();
        assert_eq!(c.get::<f64>("lr").unwrap(), Some(0.5));
        assert!(c.finish().is_err());
        assert_eq!(c.get_or("batch_size", 4usize).unwrap(), 2);
        assert_eq!(c.get_or("epochs", 7usize).unwrap(), 7);
        c.finish().unwrap();
    }

    #[test]
    fn rejects_malformed_lines() {
        assert!(KvConfig::parse(Path::new("c"), "lr 0.5").is_err());
        assert!(KvConfig::parse(Path::new("c"), "a=1\na=2").is_err());
        let c = KvConfig::parse(Path::new("c"), "lr=fast").unwrap();
        let e = c.get::<f64>("lr").unwrap_err().to_string();
        assert!(e.starts_with("c:1:"), "{e}");
    }
}
