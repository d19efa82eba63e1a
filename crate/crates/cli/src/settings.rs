//! Flat `key = value` configuration with precedence flags > file > defaults.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub struct Settings {
    command: &'static str,
    file: BTreeMap<String, String>,
    used: BTreeSet<String>,
    resolved: BTreeMap<String, String>,
}

/// Parses `key = value` lines. Blank lines and lines starting with `#` are
/// skipped; underscores in keys are read as dashes.
pub fn parse_config(text: &str) -> CliResult<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            CliError::Config(format!("config line {}: expected key = value", i + 1))
        })?;
        let key = k.trim().replace('_', "-");
        if key.is_empty() {
            return Err(CliError::Config(format!(
                "config line {}: empty key",
                i + 1
            )));
        }
        if map.insert(key.clone(), v.trim().to_string()).is_some() {
            return Err(CliError::Config(format!(
                "config line {}: duplicate key '{key}'",
                i + 1
            )));
        }
    }
    Ok(map)
}

impl Settings {
    pub fn load(command: &'static str, path: Option<&Path>) -> CliResult<Self> {
        let file = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| {
                    CliError::Config(format!("cannot read config file {}: {e}", p.display()))
                })?;
                parse_config(&text)?
            }
            None => BTreeMap::new(),
        };
        Ok(Self {
            command,
            file,
            used: BTreeSet::new(),
            resolved: BTreeMap::new(),
        })
    }

    fn raw(&mut self, key: &str, flag: &Option<String>) -> Option<String> {
        self.used.insert(key.to_string());
        flag.clone().or_else(|| self.file.get(key).cloned())
    }

    fn parse<T: FromStr>(key: &str, raw: &str) -> CliResult<T>
    where
        T::Err: Display,
    {
        raw.parse()
            .map_err(|e| CliError::Config(format!("{key}: {e}")))
    }

    /// A value that enters the configuration hash.
    pub fn get<T: FromStr>(
        &mut self,
        key: &str,
        flag: &Option<String>,
        default: &str,
    ) -> CliResult<T>
    where
        T::Err: Display,
    {
        let raw = self.raw(key, flag).unwrap_or_else(|| default.to_string());
        let v = Self::parse(key, &raw)?;
        self.resolved.insert(key.to_string(), raw);
        Ok(v)
    }

    pub fn optional<T: FromStr>(&mut self, key: &str, flag: &Option<String>) -> CliResult<Option<T>>
    where
        T::Err: Display,
    {
        match self.raw(key, flag) {
            Some(raw) => {
                let v = Self::parse(key, &raw)?;
                self.resolved.insert(key.to_string(), raw);
                Ok(Some(v))
            }
            None => Ok(None),
        }
    }

    /// An input file; it must exist.
    pub fn input(&mut self, key: &str, flag: &Option<String>) -> CliResult<PathBuf> {
        let raw = self
            .raw(key, flag)
            .ok_or_else(|| CliError::Config(format!("missing required setting '{key}'")))?;
        let path = PathBuf::from(&raw);
        if !path.is_file() {
            return Err(CliError::Input(format!(
                "{key}: file {} does not exist",
                path.display()
            )));
        }
        self.resolved.insert(key.to_string(), raw);
        Ok(path)
    }

    /// An output location. Output paths do not enter the hash, so the same
    /// run written to two places produces identical files.
    pub fn output(&mut self, key: &str, flag: &Option<String>) -> CliResult<Option<PathBuf>> {
        Ok(self.raw(key, flag).map(PathBuf::from))
    }

    pub fn required_output(&mut self, key: &str, flag: &Option<String>) -> CliResult<PathBuf> {
        self.output(key, flag)?
            .ok_or_else(|| CliError::Config(format!("missing required setting '{key}'")))
    }

    /// Fails on file keys no setting asked for.
    pub fn finish(&self) -> CliResult<()> {
        let unknown: Vec<&str> = self
            .file
            .keys()
            .filter(|k| !self.used.contains(*k))
            .map(String::as_str)
            .collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(CliError::Config(format!(
                "unknown config keys for '{}': {}",
                self.command,
                unknown.join(", ")
            )))
        }
    }

    pub fn resolved(&self) -> &BTreeMap<String, String> {
        &self.resolved
    }

    /// First 16 hex digits of the SHA-256 of the command and its resolved
    /// settings.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.command.as_bytes());
        for (k, v) in &self.resolved {
            h.update(format!("\n{k}={v}").as_bytes());
        }
        hex::encode(h.finalize())[..16].to_string()
    }
}

/// Comma-separated values.
pub fn parse_list<T: FromStr>(key: &str, raw: &str) -> CliResult<Vec<T>>
where
    T::Err: Display,
{
    raw.split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|e| CliError::Config(format!("{key}: '{}': {e}", s.trim())))
        })
        .collect()
}
