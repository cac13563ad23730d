use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::report::write_json;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Record of one command run: its arguments, full configuration, produced
/// files and headline results.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool_version: String,
    pub command: String,
    pub args: Vec<String>,
    pub created_unix: u64,
    pub seed: u64,
    pub config: serde_json::Value,
    pub outputs: Vec<PathBuf>,
    pub results: BTreeMap<String, serde_json::Value>,
    pub status: String,
}

impl Manifest {
    pub fn new(command: &str, seed: u64, config: serde_json::Value) -> Self {
        Self {
            tool_version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            args: std::env::args().collect(),
            created_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            seed,
            config,
            status: "running".into(),
            ..Self::default()
        }
    }

    pub fn output(&mut self, p: impl Into<PathBuf>) {
        self.outputs.push(p.into());
    }

    pub fn result<S: Serialize>(&mut self, key: &str, value: S) {
        self.results
            .insert(key.into(), serde_json::to_value(value).expect("serializable result"));
    }

    pub fn write(&self, run_dir: &Path) -> Result<()> {
        write_json(&run_dir.join(MANIFEST_FILE), self)
    }
}
