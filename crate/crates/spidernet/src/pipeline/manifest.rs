//! Run manifests: every command records its resolved arguments, seed, and
//! produced artifacts, and can be re-run from the manifest alone.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Fully resolved arguments (config files inlined), sufficient to
    /// reproduce the run.
    pub args: Value,
    pub seed: u64,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub toolkit_version: String,
    pub duration_ms: u128,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<RunManifest> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Run `body`, then write a manifest into `out_dir` whether it succeeded or
/// failed. `args` must inline everything needed to re-run.
pub fn with_manifest<F>(
    command: &str,
    args: Value,
    seed: u64,
    inputs: &[PathBuf],
    out_dir: &Path,
    body: F,
) -> Result<Vec<PathBuf>>
where
    F: FnOnce() -> Result<Vec<PathBuf>>,
{
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    let started = Instant::now();
    let result = body();
    let manifest = RunManifest {
        command: command.to_string(),
        args,
        seed,
        inputs: inputs.iter().map(|p| p.display().to_string()).collect(),
        outputs: match &result {
            Ok(outputs) => outputs.iter().map(|p| p.display().to_string()).collect(),
            Err(_) => Vec::new(),
        },
        toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
        duration_ms: started.elapsed().as_millis(),
        error: result.as_ref().err().map(|e| e.to_string()),
    };
    // best effort: the manifest must exist even when the command failed
    if let Ok(text) = serde_json::to_string_pretty(&manifest) {
        let _ = fs::write(out_dir.join(MANIFEST_FILE), text);
    }
    result
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(serde_json::from_str(&text)?)
}
