//! Flat `section.key = value` configuration files.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
struct Entry {
    value: String,
    line: usize,
}

/// Parsed configuration with the source text hash used for provenance lines.
#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    path: String,
    entries: BTreeMap<String, Entry>,
    hash: String,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Lines are `key = value`; blank lines and lines starting with `#` are ignored. Repeated keys
    /// are an error.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| Error::Parse {
                path: origin.to_string(),
                line: i + 1,
                msg,
            };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected 'key = value', got '{line}'")))?;
            let key = k.trim();
            if key.is_empty() || key.contains(char::is_whitespace) {
                return Err(err(format!("invalid key '{key}'")));
            }
            if let Some(prev) = entries.get(key) {
                let prev: &Entry = prev;
                return Err(err(format!(
                    "duplicate key '{key}' (first set on line {})",
                    prev.line
                )));
            }
            entries.insert(
                key.to_string(),
                Entry {
                    value: v.trim().to_string(),
                    line: i + 1,
                },
            );
        }
        let digest = Sha256::digest(text.as_bytes());
        let hash = digest.iter().take(8).map(|b| format!("{b:02x}")).collect();
        Ok(Self {
            path: origin.to_string(),
            entries,
            hash,
        })
    }

    /// First 16 hex digits of the SHA-256 of the source text.
    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|e| e.value.as_str())
    }

    fn parse_err(&self, key: &str, msg: String) -> Error {
        Error::Parse {
            path: self.path.clone(),
            line: self.entries.get(key).map_or(0, |e| e.line),
            msg: format!("{key}: {msg}"),
        }
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|e: T::Err| self.parse_err(key, e.to_string())),
        }
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key)?
            .ok_or_else(|| self.parse_err(key, "required key is missing".into()))
    }

    /// Comma-separated list; an empty value gives an empty list.
    pub fn get_list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: std::fmt::Display,
    {
        match self.raw(key) {
            None => Ok(None),
            Some("") => Ok(Some(Vec::new())),
            Some(v) => v
                .split(',')
                .map(|x| {
                    x.trim()
                        .parse()
                        .map_err(|e: T::Err| self.parse_err(key, e.to_string()))
                })
                .collect::<Result<Vec<_>>>()
                .map(Some),
        }
    }

    /// Errors on any key outside `allowed`, to catch typos.
    pub fn check_keys(&self, allowed: &[&str]) -> Result<()> {
        for key in self.entries.keys() {
            if !allowed.contains(&key.as_str()) {
                return Err(self.parse_err(key, "unknown key".into()));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_values_and_lists() {
        let c = Config::parse(
            "# comment\nbenchmark.seed = 7\n\nbenchmark.sites = 25, 49\nname = a b\n",
            "t",
        )
        .unwrap();
        assert_eq!(c.require::<u64>("benchmark.seed").unwrap(), 7);
        assert_eq!(
            c.get_list::<usize>("benchmark.sites").unwrap(),
            Some(vec![25, 49])
        );
        assert_eq!(c.raw("name"), Some("a b"));
        assert_eq!(c.get::<u64>("missing").unwrap(), None);
        assert_eq!(c.hash().len(), 16);
    }

    #[test]
    fn duplicate_keys_name_the_line() {
        match Config::parse("a = 1\nb = 2\na = 3\n", "cfg") {
            Err(Error::Parse { line, msg, .. }) => {
                assert_eq!(line, 3);
                assert!(msg.contains("line 1"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_lines_and_values() {
        assert!(Config::parse("just text\n", "cfg").is_err());
        let c = Config::parse("x = abc\n", "cfg").unwrap();
        match c.get::<f64>("x") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("{other:?}"),
        }
        assert!(c.check_keys(&["y"]).is_err());
        assert!(c.check_keys(&["x"]).is_ok());
    }
}
