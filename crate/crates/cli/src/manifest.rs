//! Run manifests written beside every output.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_SUFFIX: &str = ".manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
        Ok(Self { path: path.to_path_buf(), sha256: hex::encode(Sha256::digest(&bytes)) })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    /// Effective argument list with any `--config` file already merged in,
    /// so replaying does not depend on the file.
    pub argv: Vec<String>,
    /// Parsed arguments of the subcommand after merging.
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

impl RunManifest {
    /// Path of the manifest that belongs to `primary_output`.
    pub fn path_for(primary_output: &Path) -> PathBuf {
        let mut name = primary_output.as_os_str().to_owned();
        name.push(MANIFEST_SUFFIX);
        PathBuf::from(name)
    }

    pub fn write(&self, primary_output: &Path) -> Result<PathBuf> {
        let path = Self::path_for(primary_output);
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?)
    }

    pub fn argv_os(&self) -> Vec<OsString> {
        self.argv.iter().map(OsString::from).collect()
    }

    /// Digests of the recorded outputs that no longer match their files.
    pub fn stale_outputs(&self) -> Result<Vec<PathBuf>> {
        let mut stale = Vec::new();
        for out in &self.outputs {
            if FileDigest::of(&out.path)?.sha256 != out.sha256 {
                stale.push(out.path.clone());
            }
        }
        Ok(stale)
    }
}

/// Re-runs the command recorded in a manifest and returns the exit code.
pub fn replay(manifest: &Path) -> Result<i32> {
    let m = RunManifest::load(manifest)?;
    Ok(crate::run(m.argv_os()))
}
