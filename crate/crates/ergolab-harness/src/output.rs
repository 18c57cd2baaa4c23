//! Output directory bookkeeping: every file written goes through [`Output`] and ends up in
//! the manifest with its hash.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{hex, ExperimentConfig};
use crate::HarnessError;

pub const MANIFEST: &str = "manifest.json";

/// 17 significant digits, enough to round-trip any binary64.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

/// A CSV field, quoted when it needs to be.
pub fn field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// CSV text from a header and rows of already formatted cells.
pub fn csv<I: IntoIterator<Item = Vec<String>>>(header: &[&str], rows: I) -> String {
    let mut s = header.join(",");
    s.push('\n');
    for row in rows {
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRecord {
    pub name: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Versions {
    pub ergolab: String,
    pub harness: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config_sha256: String,
    pub seed: u64,
    pub versions: Versions,
    pub wall_time_seconds: f64,
    pub files: Vec<FileRecord>,
}

pub struct Output {
    dir: PathBuf,
    files: Vec<FileRecord>,
    started: Instant,
}

impl Output {
    pub fn create(dir: &Path) -> Result<Self, HarnessError> {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::Io(format!("{}: {e}", dir.display())))?;
        Ok(Output { dir: dir.to_path_buf(), files: Vec::new(), started: Instant::now() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn files(&self) -> &[FileRecord] {
        &self.files
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), HarnessError> {
        if name == MANIFEST || self.files.iter().any(|f| f.name == name) {
            return Err(HarnessError::Io(format!("{name} written twice")));
        }
        let path = self.dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
        self.files.push(FileRecord { name: name.into(), sha256: hex(&Sha256::digest(bytes)), bytes: bytes.len() as u64 });
        Ok(())
    }

    pub fn text(&mut self, name: &str, s: &str) -> Result<(), HarnessError> {
        self.write(name, s.as_bytes())
    }

    pub fn json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<(), HarnessError> {
        let mut s = serde_json::to_string_pretty(value).map_err(|e| HarnessError::Io(e.to_string()))?;
        s.push('\n');
        self.write(name, s.as_bytes())
    }

    /// Writes the manifest; the output directory is complete afterwards.
    pub fn finish(self, command: &str, cfg: &ExperimentConfig) -> Result<Manifest, HarnessError> {
        let manifest = Manifest {
            command: command.into(),
            config_sha256: cfg.hash(),
            seed: cfg.seed,
            versions: Versions { ergolab: ergolab::VERSION.into(), harness: env!("CARGO_PKG_VERSION").into() },
            wall_time_seconds: self.started.elapsed().as_secs_f64(),
            files: self.files,
        };
        let mut s = serde_json::to_string_pretty(&manifest).map_err(|e| HarnessError::Io(e.to_string()))?;
        s.push('\n');
        let path = self.dir.join(MANIFEST);
        std::fs::write(&path, s).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
        Ok(manifest)
    }
}
