//! Output directories: files plus exactly one manifest.

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{CliError, CliResult};
use crate::manifest::{now, RunManifest, MANIFEST_FILE};

pub struct OutDir {
    pub dir: PathBuf,
    pub manifest: RunManifest,
}

impl OutDir {
    /// Create `dir`. A manifest left by a different command is refused so
    /// that each directory describes a single run.
    pub fn create(dir: &Path, manifest: RunManifest) -> CliResult<Self> {
        let existing = dir.join(MANIFEST_FILE);
        if existing.exists() {
            let old = RunManifest::load(dir)?;
            if old.command != manifest.command {
                return Err(CliError::Config(format!(
                    "{} already holds output of `{}`; choose another directory",
                    dir.display(),
                    old.command
                )));
            }
        }
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(OutDir {
            dir: dir.to_path_buf(),
            manifest,
        })
    }

    pub fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> CliResult<()> {
        let path = self.dir.join(name);
        fs::write(&path, contents).map_err(|e| CliError::io(&path, e))?;
        self.record(name);
        Ok(())
    }

    /// Note a file written by someone else.
    pub fn record(&mut self, name: &str) {
        if !self.manifest.outputs.iter().any(|o| o == name) {
            self.manifest.outputs.push(name.to_string());
        }
    }

    pub fn finish(mut self) -> CliResult<PathBuf> {
        self.manifest.finished = now();
        let text = serde_json::to_string_pretty(&self.manifest)
            .map_err(|e| CliError::Config(e.to_string()))?;
        let path = self.dir.join(MANIFEST_FILE);
        fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))?;
        Ok(self.dir)
    }
}

/// Minimal CSV builder; fields never contain separators.
pub struct Csv(String);

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        Csv(header.join(",") + "\n")
    }

    pub fn row(&mut self, fields: &[&dyn Display]) {
        let line: Vec<String> = fields.iter().map(|f| f.to_string()).collect();
        self.0.push_str(&line.join(","));
        self.0.push('\n');
    }

    pub fn finish(self) -> String {
        self.0
    }
}
