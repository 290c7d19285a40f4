//! One JSON manifest per artifact-producing command.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;
use thermsid::persist::{sha256_file, sha256_hex};

#[derive(Debug, Serialize)]
pub struct FileEntry {
    pub role: String,
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct ConfigEntry {
    pub path: String,
    pub sha256: String,
    pub text: String,
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub argv: Vec<String>,
    pub config: Option<ConfigEntry>,
    pub seeds: BTreeMap<String, u64>,
    pub parameters: BTreeMap<String, String>,
    pub inputs: Vec<FileEntry>,
    pub outputs: Vec<FileEntry>,
    pub timings_s: Vec<(String, f64)>,
    pub status: String,
    pub error: Option<String>,
    #[serde(skip)]
    stage_start: Option<(String, Instant)>,
}

fn entry(role: &str, path: &Path) -> Result<FileEntry> {
    let bytes = std::fs::metadata(path)
        .with_context(|| format!("stat {}", path.display()))?
        .len();
    Ok(FileEntry {
        role: role.into(),
        path: path.display().to_string(),
        bytes,
        sha256: sha256_file(path)?,
    })
}

impl Manifest {
    pub fn new(command: &str) -> Self {
        Manifest {
            tool: "thermsid",
            version: env!("CARGO_PKG_VERSION"),
            command: command.into(),
            argv: std::env::args().collect(),
            config: None,
            seeds: BTreeMap::new(),
            parameters: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            timings_s: Vec::new(),
            status: "running".into(),
            error: None,
            stage_start: None,
        }
    }

    pub fn config(&mut self, path: Option<&Path>, text: Option<&str>) {
        if let (Some(path), Some(text)) = (path, text) {
            self.config = Some(ConfigEntry {
                path: path.display().to_string(),
                sha256: sha256_hex(text.as_bytes()),
                text: text.into(),
            });
        }
    }

    pub fn param(&mut self, key: &str, value: impl ToString) {
        self.parameters.insert(key.into(), value.to_string());
    }

    pub fn seed(&mut self, name: &str, value: u64) {
        self.seeds.insert(name.into(), value);
    }

    pub fn input(&mut self, role: &str, path: &Path) -> Result<()> {
        self.inputs.push(entry(role, path)?);
        Ok(())
    }

    pub fn output(&mut self, role: &str, path: &Path) -> Result<()> {
        self.outputs.push(entry(role, path)?);
        Ok(())
    }

    /// Closes the running stage, if any, and opens `name`.
    pub fn stage(&mut self, name: &str) {
        self.end_stage();
        self.stage_start = Some((name.into(), Instant::now()));
    }

    fn end_stage(&mut self) {
        if let Some((name, t)) = self.stage_start.take() {
            self.timings_s.push((name, t.elapsed().as_secs_f64()));
        }
    }

    /// Path of the manifest written next to `out`.
    pub fn path_for(out: &Path) -> PathBuf {
        sibling(out, "manifest.json")
    }

    pub fn finish(mut self, out: &Path, result: &Result<()>) -> Result<PathBuf> {
        self.end_stage();
        match result {
            Ok(()) => self.status = "ok".into(),
            Err(e) => {
                self.status = "failed".into();
                self.error = Some(format!("{e:#}"));
            }
        }
        let path = Self::path_for(out);
        let mut text = serde_json::to_string_pretty(&self)?;
        text.push('\n');
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

/// `out` with `.suffix` appended to its file name.
pub fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".");
    name.push(suffix);
    out.with_file_name(name)
}
