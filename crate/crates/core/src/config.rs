//! Plain `key = value` files. Repeated keys form lists; `#` starts a comment.

use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KvFile {
    pub path: Option<PathBuf>,
    /// Entries in file order.
    pub entries: Vec<(String, String)>,
}

impl KvFile {
    pub fn parse(text: &str, path: Option<&Path>) -> Result<Self> {
        let mut entries = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(p) => &raw[..p],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "{}line {}: expected key = value, got `{line}`",
                    path.map(|p| format!("{}: ", p.display())).unwrap_or_default(),
                    n + 1
                )));
            };
            let key = k.trim();
            if key.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", n + 1)));
            }
            entries.push((key.to_string(), v.trim().to_string()));
        }
        Ok(KvFile { path: path.map(Path::to_path_buf), entries })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        KvFile::parse(&text, Some(path))
    }

    /// The single value of `key`; repeating a scalar key is an error.
    pub fn get(&self, key: &str) -> Result<Option<&str>> {
        let all = self.get_all(key);
        match all.len() {
            0 => Ok(None),
            1 => Ok(Some(all[0])),
            _ => Err(Error::Config(format!("key `{key}` given {} times", all.len()))),
        }
    }

    pub fn get_all(&self, key: &str) -> Vec<&str> {
        self.entries
            .iter()
            .filter(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .collect()
    }

    pub fn parsed<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.get(key)? {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{v}`"))),
        }
    }

    /// Entries whose key starts with `prefix`, with the prefix removed.
    pub fn with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = (&'a str, &'a str)> + 'a {
        self.entries
            .iter()
            .filter_map(move |(k, v)| k.strip_prefix(prefix).map(|rest| (rest, v.as_str())))
    }

    /// Fails on keys outside `known` (prefix entries end in `.`).
    pub fn check_keys(&self, known: &[&str]) -> Result<()> {
        for (k, _) in &self.entries {
            let ok = known
                .iter()
                .any(|n| if n.ends_with('.') { k.starts_with(n) } else { k == n });
            if !ok {
                return Err(Error::Config(format!("unknown key `{k}`")));
            }
        }
        Ok(())
    }

    /// Canonical rendering: entries sorted by key, then value.
    pub fn canonical(&self) -> String {
        let mut sorted = self.entries.clone();
        sorted.sort();
        sorted
            .iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }
}

/// First 16 hex digits of the SHA-256 of `text`.
pub fn config_hash(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// `true`/`false`/`yes`/`no`/`1`/`0`.
pub fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::Config(format!("`{key}`: expected a boolean, got `{v}`"))),
    }
}
