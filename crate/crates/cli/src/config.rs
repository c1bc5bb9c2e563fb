//! Resolved run parameters and the sectioned `key = value` file format.
//!
//! ```text
//! [data]
//! n_sim = 500000
//! keep_frac = 0.1
//! ```
//!
//! The manifest written by every run uses the same format and lists every
//! key, so it can be passed back with `--config`.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{CliError, Result};

/// Every key with its default, in manifest order. An empty default means
/// "unset".
pub const SCHEMA: &[(&str, &str, &str)] = &[
    ("run", "command", ""),
    ("run", "case", ""),
    ("run", "seed", "0"),
    ("run", "out", ""),
    ("run", "plots", "false"),
    ("model", "selector", ""),
    ("approx", "selector", ""),
    ("data", "y_obs", ""),
    ("data", "coord", "0"),
    ("data", "coord2", "1"),
    ("data", "n_sim", "100000"),
    ("data", "keep_frac", "0.1"),
    ("data", "standardize", "false"),
    ("data", "eps_clip", "0.000001"),
    ("net", "hidden", "80,80"),
    ("net", "components", "1"),
    ("net", "activation", "tanh"),
    ("net", "param_floor", "0.0001"),
    ("train", "lr", "0.001"),
    ("train", "batch", "256"),
    ("train", "epochs", "200"),
    ("train", "val_frac", "0.1"),
    ("train", "patience", "20"),
    ("validate", "checkpoints", "1000,10000,50000"),
    ("validate", "blocks", "3"),
    ("validate", "conv_tol", "0.05"),
    ("validate", "block_tol", "0.1"),
    ("baselines", "bins", "20"),
    ("baselines", "alpha", "0.8"),
    ("baselines", "n_draws", "10000"),
];

fn index_of(section: &str, key: &str) -> Option<usize> {
    SCHEMA.iter().position(|&(s, k, _)| s == section && k == key)
}

/// One value per [`SCHEMA`] entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunConfig {
    values: Vec<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            values: SCHEMA.iter().map(|&(_, _, d)| d.to_string()).collect(),
        }
    }
}

/// Settings read from a file or flags, applied on top of a [`RunConfig`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Overrides {
    entries: Vec<(usize, String)>,
}

impl Overrides {
    pub fn set(&mut self, section: &str, key: &str, value: impl Into<String>) -> Result<()> {
        let i = index_of(section, key).ok_or_else(|| CliError::usage(format!("unknown key {section}.{key}")))?;
        self.entries.retain(|(j, _)| *j != i);
        self.entries.push((i, value.into()));
        Ok(())
    }

    /// `section.key=value`, as given to `--set`.
    pub fn set_dotted(&mut self, assignment: &str) -> Result<()> {
        let (path, value) = assignment
            .split_once('=')
            .ok_or_else(|| CliError::usage(format!("expected section.key=value, got {assignment:?}")))?;
        let (section, key) = path
            .trim()
            .split_once('.')
            .ok_or_else(|| CliError::usage(format!("expected section.key, got {path:?}")))?;
        self.set(section, key, value.trim())
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        let i = index_of(section, key)?;
        self.entries.iter().find(|(j, _)| *j == i).map(|(_, v)| v.as_str())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut out = Overrides::default();
        let mut section: Option<String> = None;
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = Some(name.trim().to_string());
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::usage(format!("config line {}: expected key = value", n + 1)))?;
            let sec = section
                .as_deref()
                .ok_or_else(|| CliError::usage(format!("config line {}: key outside a section", n + 1)))?;
            out.set(sec, key.trim(), value.trim())
                .map_err(|e| CliError::usage(format!("config line {}: {e}", n + 1)))?;
        }
        Ok(out)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }
}

impl RunConfig {
    pub fn apply(&mut self, overrides: &Overrides) {
        for (i, v) in &overrides.entries {
            self.values[*i] = v.clone();
        }
    }

    pub fn set(&mut self, section: &str, key: &str, value: impl Into<String>) {
        let i = index_of(section, key).unwrap_or_else(|| panic!("key {section}.{key} not in schema"));
        self.values[i] = value.into();
    }

    pub fn get(&self, section: &str, key: &str) -> &str {
        let i = index_of(section, key).unwrap_or_else(|| panic!("key {section}.{key} not in schema"));
        &self.values[i]
    }

    pub fn is_set(&self, section: &str, key: &str) -> bool {
        !self.get(section, key).is_empty()
    }

    fn typed<T: std::str::FromStr>(&self, section: &str, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.get(section, key);
        raw.trim()
            .parse()
            .map_err(|e| CliError::usage(format!("{section}.{key} = {raw:?}: {e}")))
    }

    pub fn usize(&self, section: &str, key: &str) -> Result<usize> {
        self.typed(section, key)
    }

    pub fn u64(&self, section: &str, key: &str) -> Result<u64> {
        self.typed(section, key)
    }

    pub fn f64(&self, section: &str, key: &str) -> Result<f64> {
        self.typed(section, key)
    }

    pub fn bool(&self, section: &str, key: &str) -> Result<bool> {
        self.typed(section, key)
    }

    fn list<T: std::str::FromStr>(&self, section: &str, key: &str) -> Result<Vec<T>>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.get(section, key).trim();
        if raw.is_empty() {
            return Ok(Vec::new());
        }
        raw.split(',')
            .map(|f| {
                f.trim()
                    .parse()
                    .map_err(|e| CliError::usage(format!("{section}.{key}: bad entry {f:?}: {e}")))
            })
            .collect()
    }

    pub fn reals(&self, section: &str, key: &str) -> Result<Vec<f64>> {
        self.list(section, key)
    }

    pub fn usizes(&self, section: &str, key: &str) -> Result<Vec<usize>> {
        self.list(section, key)
    }

    /// The manifest text: every key in schema order.
    pub fn to_manifest(&self) -> String {
        let mut out = String::from("# distmap run manifest\n");
        let mut current = "";
        for (&(section, key, _), value) in SCHEMA.iter().zip(&self.values) {
            if section != current {
                let _ = writeln!(out, "\n[{section}]");
                current = section;
            }
            let _ = writeln!(out, "{key} = {value}");
        }
        out
    }
}

/// Comma-joined shortest round-trip representation.
pub fn join_reals(values: &[f64]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}
