//! Plain-text run manifests.
//!
//! Every command that writes outputs also writes one of these next to them:
//! the fully resolved configuration, seeds, the crate version, and a SHA-256
//! checksum of every input file, as `key = value` lines. A manifest plus the
//! same binary is enough to reproduce a run exactly.

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use sha2::{Digest, Sha256};

pub struct Manifest {
    entries: Vec<(String, String)>,
}

impl Manifest {
    pub fn new(command: &str, workers: usize) -> Self {
        let mut m = Manifest { entries: Vec::new() };
        m.push("command", command);
        m.push("crate_version", env!("CARGO_PKG_VERSION"));
        m.push("workers", workers);
        m
    }

    pub fn push(&mut self, key: impl Into<String>, value: impl Display) {
        self.entries.push((key.into(), value.to_string()));
    }

    /// Floats are recorded in round-trip form so the manifest can seed an
    /// exact rerun.
    pub fn push_f64(&mut self, key: impl Into<String>, value: f64) {
        self.entries.push((key.into(), format!("{value:?}")));
    }

    pub fn push_f64_list(&mut self, key: impl Into<String>, values: &[f64]) {
        let items: Vec<String> = values.iter().map(|v| format!("{v:?}")).collect();
        self.entries.push((key.into(), format!("[{}]", items.join(", "))));
    }

    /// Records an input file's path and SHA-256 checksum.
    pub fn input_file(&mut self, key: &str, path: &Path) -> Result<()> {
        let bytes = fs::read(path)
            .with_context(|| format!("checksumming input file {}", path.display()))?;
        self.push(format!("input.{key}.path"), path.display());
        self.push(format!("input.{key}.sha256"), format!("{:x}", Sha256::digest(bytes)));
        Ok(())
    }

    pub fn output(&mut self, key: &str, path: &Path) {
        self.push(format!("output.{key}"), path.display());
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = String::new();
        for (k, v) in &self.entries {
            text.push_str(k);
            text.push_str(" = ");
            text.push_str(v);
            text.push('\n');
        }
        fs::write(path, text)
            .with_context(|| format!("writing run manifest {}", path.display()))?;
        Ok(())
    }
}

/// Manifest path for a single-file output: the output path with
/// `.manifest.txt` appended (`design.csv` -> `design.csv.manifest.txt`).
pub fn for_file(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.txt");
    out.with_file_name(name)
}

/// Manifest path for a directory of outputs.
pub fn for_dir(dir: &Path) -> PathBuf {
    dir.join("run_manifest.txt")
}
