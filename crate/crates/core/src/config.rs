//! Flat `key = value` run configuration.
//!
//! Lines are `key=value`; blank lines and lines starting with `#` are
//! ignored. Relative paths are resolved against the directory holding the
//! config file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("missing config key `{0}`")]
    MissingKey(String),
    #[error("config key `{key}`: cannot use {value:?} ({msg})")]
    BadValue { key: String, value: String, msg: String },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Config {
    base_dir: PathBuf,
    entries: BTreeMap<String, String>,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, base)
    }

    pub fn parse(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self, ConfigError> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Parse {
                line: i + 1,
                msg: format!("expected key=value, got {line:?}"),
            })?;
            let k = k.trim();
            if k.is_empty() {
                return Err(ConfigError::Parse {
                    line: i + 1,
                    msg: "empty key".into(),
                });
            }
            if entries.insert(k.to_string(), v.trim().to_string()).is_some() {
                return Err(ConfigError::Parse {
                    line: i + 1,
                    msg: format!("duplicate key `{k}`"),
                });
            }
        }
        Ok(Self {
            base_dir: base_dir.into(),
            entries,
        })
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Fails on the first key not in `known`.
    pub fn check_known(&self, known: &[&str]) -> Result<(), ConfigError> {
        match self.keys().find(|k| !known.contains(k)) {
            Some(k) => Err(ConfigError::UnknownKey(k.to_string())),
            None => Ok(()),
        }
    }

    pub fn opt_str(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn str(&self, key: &str) -> Result<&str, ConfigError> {
        self.opt_str(key).ok_or_else(|| ConfigError::MissingKey(key.to_string()))
    }

    pub fn opt<T: FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        self.opt_str(key)
            .map(|v| {
                v.parse().map_err(|e: T::Err| ConfigError::BadValue {
                    key: key.to_string(),
                    value: v.to_string(),
                    msg: e.to_string(),
                })
            })
            .transpose()
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        self.opt(key)?.ok_or_else(|| ConfigError::MissingKey(key.to_string()))
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.opt(key)?.unwrap_or(default))
    }

    pub fn resolve(&self, value: &str) -> PathBuf {
        let p = Path::new(value);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn path(&self, key: &str) -> Result<PathBuf, ConfigError> {
        Ok(self.resolve(self.str(key)?))
    }

    pub fn opt_path(&self, key: &str) -> Option<PathBuf> {
        self.opt_str(key).map(|v| self.resolve(v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_resolves() {
        let c = Config::parse("# run\nseed = 7\n\ngrid=data/g.cgrd\nlr=1e-3\nabs=/tmp/x\n", "/cfg").unwrap();
        assert_eq!(c.get::<u64>("seed").unwrap(), 7);
        assert_eq!(c.get::<f64>("lr").unwrap(), 1e-3);
        assert_eq!(c.path("grid").unwrap(), PathBuf::from("/cfg/data/g.cgrd"));
        assert_eq!(c.path("abs").unwrap(), PathBuf::from("/tmp/x"));
        assert_eq!(c.get_or("bins", 50usize).unwrap(), 50);
    }

    #[test]
    fn errors() {
        let c = Config::parse("seed=abc\n", ".").unwrap();
        assert!(matches!(c.get::<u64>("seed"), Err(ConfigError::BadValue { .. })));
        assert!(matches!(c.get::<u64>("epochs"), Err(ConfigError::MissingKey(k)) if k == "epochs"));
        assert!(matches!(Config::parse("a=1\na=2\n", "."), Err(ConfigError::Parse { line: 2, .. })));
        assert!(matches!(Config::parse("novalue\n", "."), Err(ConfigError::Parse { line: 1, .. })));
        assert!(matches!(c.check_known(&["bins"]), Err(ConfigError::UnknownKey(k)) if k == "seed"));
        assert!(matches!(
            Config::load(Path::new("/nonexistent/run.cfg")),
            Err(ConfigError::Io { .. })
        ));
    }
}
