//! Optional TOML config file with one section per subcommand.
//!
//! Every value a command needs resolves in the same order: command-line
//! flag, then the config-file section named after the command, then the
//! built-in default (or an error for required settings). Keys inside a
//! section use the flag names with dashes turned into underscores.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use toml::Value;

pub struct FileConfig {
    table: toml::Table,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let table = match path {
            None => toml::Table::new(),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config file {}", p.display()))?;
                text.parse()
                    .with_context(|| format!("parsing config file {}", p.display()))?
            }
        };
        Ok(Self { table })
    }

    pub fn section(&self, name: &'static str) -> Result<Section<'_>> {
        match self.table.get(name) {
            None => Ok(Section { table: None, name }),
            Some(Value::Table(t)) => Ok(Section { table: Some(t), name }),
            Some(_) => bail!("config section [{name}] must be a table"),
        }
    }
}

pub struct Section<'a> {
    table: Option<&'a toml::Table>,
    name: &'static str,
}

impl Section<'_> {
    fn value(&self, key: &str) -> Option<&Value> {
        self.table.and_then(|t| t.get(key))
    }

    fn type_error(&self, key: &str, expected: &str) -> anyhow::Error {
        anyhow::anyhow!("config key {}.{key} must be {expected}", self.name)
    }

    pub fn usize(&self, key: &str) -> Result<Option<usize>> {
        match self.value(key) {
            None => Ok(None),
            Some(Value::Integer(i)) if *i >= 0 => Ok(Some(*i as usize)),
            Some(_) => Err(self.type_error(key, "a nonnegative integer")),
        }
    }

    pub fn u64(&self, key: &str) -> Result<Option<u64>> {
        match self.value(key) {
            None => Ok(None),
            Some(Value::Integer(i)) if *i >= 0 => Ok(Some(*i as u64)),
            Some(_) => Err(self.type_error(key, "a nonnegative integer")),
        }
    }

    pub fn f64(&self, key: &str) -> Result<Option<f64>> {
        match self.value(key) {
            None => Ok(None),
            Some(Value::Float(v)) => Ok(Some(*v)),
            Some(Value::Integer(i)) => Ok(Some(*i as f64)),
            Some(_) => Err(self.type_error(key, "a number")),
        }
    }

    pub fn string(&self, key: &str) -> Result<Option<String>> {
        match self.value(key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.clone())),
            Some(_) => Err(self.type_error(key, "a string")),
        }
    }

    pub fn path(&self, key: &str) -> Result<Option<PathBuf>> {
        Ok(self.string(key)?.map(PathBuf::from))
    }

    pub fn f64_list(&self, key: &str) -> Result<Option<Vec<f64>>> {
        match self.value(key) {
            None => Ok(None),
            Some(Value::Array(items)) => items
                .iter()
                .map(|v| match v {
                    Value::Float(f) => Ok(*f),
                    Value::Integer(i) => Ok(*i as f64),
                    _ => Err(self.type_error(key, "an array of numbers")),
                })
                .collect::<Result<Vec<f64>>>()
                .map(Some),
            Some(_) => Err(self.type_error(key, "an array of numbers")),
        }
    }

    pub fn usize_list(&self, key: &str) -> Result<Option<Vec<usize>>> {
        match self.value(key) {
            None => Ok(None),
            Some(Value::Array(items)) => items
                .iter()
                .map(|v| match v {
                    Value::Integer(i) if *i >= 0 => Ok(*i as usize),
                    _ => Err(self.type_error(key, "an array of nonnegative integers")),
                })
                .collect::<Result<Vec<usize>>>()
                .map(Some),
            Some(_) => Err(self.type_error(key, "an array of nonnegative integers")),
        }
    }
}

/// Fails with a uniform message when a required setting came from neither a
/// flag nor the config file.
pub fn require<T>(value: Option<T>, flag: &str) -> Result<T> {
    value.with_context(|| {
        format!("missing required setting: pass {flag} or set it in the config file")
    })
}
