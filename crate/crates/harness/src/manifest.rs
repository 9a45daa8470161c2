//! Output directories with a JSON manifest listing every file and its SHA-256.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::SimConfig;
use crate::HarnessError;

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub label: String,
    pub command: String,
    pub version: String,
    pub config: SimConfig,
    pub summary: BTreeMap<String, serde_json::Value>,
    pub files: Vec<FileEntry>,
    pub runtime_seconds: f64,
}

impl Manifest {
    pub fn read(dir: &Path) -> Result<Self, HarnessError> {
        let path = dir.join(MANIFEST_NAME);
        let text = fs::read_to_string(&path).map_err(|source| io_error(&path, source))?;
        serde_json::from_str(&text).map_err(|e| HarnessError::Runtime(format!("manifest: {e}")))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn io_error(path: &Path, source: io::Error) -> HarnessError {
    HarnessError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Collects the files written by one command.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    files: Vec<FileEntry>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self, HarnessError> {
        fs::create_dir_all(root).map_err(|source| io_error(root, source))?;
        Ok(Self {
            root: root.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Renders `relative` into memory with `render`, writes it and records its checksum.
    pub fn write<F>(&mut self, relative: &str, render: F) -> Result<PathBuf, HarnessError>
    where
        F: FnOnce(&mut Vec<u8>) -> io::Result<()>,
    {
        let path = self.root.join(relative);
        let mut buf = Vec::new();
        render(&mut buf).map_err(|source| io_error(&path, source))?;
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|source| io_error(parent, source))?;
        }
        fs::write(&path, &buf).map_err(|source| io_error(&path, source))?;
        self.files.push(FileEntry {
            path: relative.to_string(),
            sha256: sha256_hex(&buf),
            bytes: buf.len() as u64,
        });
        Ok(path)
    }

    pub fn finish(
        self,
        command: &str,
        config: &SimConfig,
        summary: BTreeMap<String, serde_json::Value>,
        runtime_seconds: f64,
    ) -> Result<Manifest, HarnessError> {
        let manifest = Manifest {
            label: config.label.clone(),
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: config.clone(),
            summary,
            files: self.files,
            runtime_seconds,
        };
        let path = self.root.join(MANIFEST_NAME);
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&path, text + "\n").map_err(|source| io_error(&path, source))?;
        Ok(manifest)
    }
}
