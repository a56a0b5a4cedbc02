//! Run manifests: everything needed to repeat a run exactly.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub started_at: String,
    pub finished_at: String,
    /// Fully resolved arguments of the subcommand.
    pub args: serde_json::Value,
    /// Quantities derived from the data: geometry, lag orders, noise levels.
    pub derived: serde_json::Value,
}

impl RunManifest {
    pub fn new<A: Serialize, D: Serialize>(
        command: &str,
        started_at: String,
        args: &A,
        derived: &D,
    ) -> CliResult<Self> {
        Ok(Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            started_at,
            finished_at: now(),
            args: serde_json::to_value(args)?,
            derived: serde_json::to_value(derived)?,
        })
    }

    pub fn to_bytes(&self) -> CliResult<Vec<u8>> {
        let mut v = serde_json::to_vec_pretty(self)?;
        v.push(b'\n');
        Ok(v)
    }

    /// Arguments of a manifest written by `command`.
    pub fn load_args<A: DeserializeOwned>(path: &Path, command: &str) -> CliResult<A> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(&path.to_path_buf(), e))?;
        let manifest: RunManifest = serde_json::from_str(&text)?;
        if manifest.command != command {
            return Err(CliError::Input(format!(
                "{}: manifest was written by `{}`, not `{command}`",
                path.display(),
                manifest.command
            )));
        }
        Ok(serde_json::from_value(manifest.args)?)
    }
}

pub fn now() -> String {
    chrono::Utc::now().to_rfc3339()
}
