use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::{write_file, CliResult};

pub const MANIFEST_VERSION: &str = "modelrec-manifest-v1";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Record of one command invocation, written next to its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub artifact_version: String,
    pub tool_version: String,
    pub command: String,
    pub argv: Vec<String>,
    pub config_path: Option<String>,
    pub seed: u64,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    /// Every effective setting, defaults included.
    pub settings: serde_json::Value,
    /// Seconds since the Unix epoch; taken from `SOURCE_DATE_EPOCH` when set
    /// so that reruns can reproduce the manifest byte for byte.
    pub timestamp: u64,
}

impl RunManifest {
    pub fn new(command: &str, argv: &[String], seed: u64) -> Self {
        RunManifest {
            artifact_version: MANIFEST_VERSION.to_owned(),
            tool_version: env!("CARGO_PKG_VERSION").to_owned(),
            command: command.to_owned(),
            argv: argv.to_vec(),
            config_path: None,
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            settings: serde_json::Value::Null,
            timestamp: timestamp(),
        }
    }

    pub fn with_config(mut self, path: &Path) -> Self {
        self.config_path = Some(path.display().to_string());
        self
    }

    pub fn with_input(mut self, input: &str) -> Self {
        self.inputs.push(input.to_owned());
        self
    }

    pub fn with_output(mut self, path: &Path) -> Self {
        self.outputs.push(path.display().to_string());
        self
    }

    pub fn with_settings(mut self, settings: serde_json::Value) -> Self {
        self.settings = settings;
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serialises") + "\n"
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        write_file(path, &self.to_json())
    }

    /// `out.csv` gets `out.csv.manifest.json`.
    pub fn path_beside(out: &Path) -> PathBuf {
        let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
        name.push(".");
        name.push(MANIFEST_FILE);
        out.with_file_name(name)
    }
}

fn timestamp() -> u64 {
    if let Some(fixed) = std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|v| v.parse().ok()) {
        return fixed;
    }
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}
