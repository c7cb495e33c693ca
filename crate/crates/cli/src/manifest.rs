//! Run record written next to the outputs of every command.

use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{io, CliError};

#[derive(Debug, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    /// Arguments after the program name, verbatim.
    pub args: Vec<String>,
    pub tool_version: String,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

pub fn digest(path: &Path) -> Result<FileDigest, CliError> {
    let bytes = std::fs::read(path).map_err(|e| io(path, e))?;
    Ok(FileDigest {
        path: path.display().to_string(),
        sha256: hex::encode(Sha256::digest(&bytes)),
    })
}

impl RunManifest {
    pub fn new(command: &str, seed: Option<u64>, config: serde_json::Value) -> Self {
        Self {
            command: command.into(),
            args: std::env::args().skip(1).collect(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            seed,
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<(), CliError> {
        self.inputs.push(digest(path)?);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> Result<(), CliError> {
        self.outputs.push(digest(path)?);
        Ok(())
    }

    /// Writes `<dir>/<command>.run.json` and returns its path.
    pub fn write(&self, dir: &Path) -> Result<PathBuf, CliError> {
        let path = dir.join(format!("{}.run.json", self.command));
        let mut text = serde_json::to_string_pretty(self).expect("manifest is plain data");
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| io(&path, e))?;
        Ok(path)
    }
}
