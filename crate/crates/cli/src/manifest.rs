//! Run manifests: enough to reproduce any run bitwise. This is the only
//! artifact that carries a timestamp — metrics and signal files stay
//! byte-identical across reruns of the same configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    /// Arguments after the program name, verbatim.
    pub argv: Vec<String>,
    pub seed: u64,
    /// SHA-256 of the effective configuration JSON (after flag overrides).
    pub config_sha256: String,
    pub versions: BTreeMap<String, String>,
    pub created_unix_ms: u128,
}

impl Manifest {
    pub fn new(command: &str, seed: u64, effective_config_json: &str) -> Self {
        let mut versions = BTreeMap::new();
        versions.insert("spherelift".into(), env!("CARGO_PKG_VERSION").into());
        versions.insert("spherelift-core".into(), spherelift_core::VERSION.into());
        Manifest {
            command: command.into(),
            argv: std::env::args().skip(1).collect(),
            seed,
            config_sha256: hex::encode(Sha256::digest(effective_config_json.as_bytes())),
            versions,
            created_unix_ms: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_millis())
                .unwrap_or(0),
        }
    }

    /// Write as `manifest.json` inside `dir`.
    pub fn write_in_dir(&self, dir: &Path) -> CliResult<()> {
        self.write_to(&dir.join("manifest.json"))
    }

    /// Write as a sibling of a single-file output: `<out>.manifest.json`.
    pub fn write_for_file(&self, out: &Path) -> CliResult<()> {
        let mut name = out.file_name().unwrap_or_default().to_os_string();
        name.push(".manifest.json");
        self.write_to(&out.with_file_name(name))
    }

    fn write_to(&self, path: &PathBuf) -> CliResult<()> {
        let body = serde_json::to_string_pretty(self)
            .map_err(|e| CliError::Data(format!("serializing manifest: {e}")))?;
        std::fs::write(path, body)
            .map_err(|e| CliError::Data(format!("writing {}: {e}", path.display())))?;
        Ok(())
    }
}
