use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{SystemTime, UNIX_EPOCH};

use hfc_core::checkpoint::write_atomic;
use serde::{Deserialize, Serialize};

use crate::error::Result;

pub const RUN_MANIFEST_FILE: &str = "run_manifest.json";

/// Record of one command invocation, written when the command finishes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    /// Milliseconds since the Unix epoch.
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    pub revision: String,
    pub artifacts: Vec<PathBuf>,
}

pub fn now_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

/// `git describe --always --dirty` of the working directory, or `unknown`.
pub fn revision() -> String {
    Command::new("git")
        .args(["describe", "--always", "--dirty"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".into())
}

impl RunManifest {
    pub fn begin(command: &str, config_hash: String, seed: u64) -> Self {
        RunManifest {
            command: command.into(),
            config_hash,
            seed,
            started_unix_ms: now_ms(),
            finished_unix_ms: 0,
            revision: revision(),
            artifacts: Vec::new(),
        }
    }

    pub fn finish(&mut self, out_dir: &Path) -> Result<PathBuf> {
        self.finished_unix_ms = now_ms();
        let path = out_dir.join(RUN_MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).expect("manifest serialises");
        write_atomic(&path, text.as_bytes())?;
        Ok(path)
    }
}
