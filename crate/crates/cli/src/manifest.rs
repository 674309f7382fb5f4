//! Experiment manifests and checksummed result files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::table::Table;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputRecord {
    /// File name relative to the manifest.
    pub path: String,
    pub sha256: String,
    pub rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    /// Every parameter read by the run, defaults included.
    pub params: BTreeMap<String, String>,
    pub seed: u64,
    pub wall_clock_seconds: f64,
    pub outputs: Vec<OutputRecord>,
    pub summary: BTreeMap<String, String>,
}

impl ExperimentManifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn from_json(s: &str) -> serde_json::Result<Self> {
        serde_json::from_str(s)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn manifest_name(subcommand: &str) -> String {
    format!("{subcommand}.manifest.json")
}

/// Write `<dir>/<subcommand>.csv` and fill in its output record.
pub fn write_table(dir: &Path, subcommand: &str, table: &Table) -> std::io::Result<(PathBuf, OutputRecord)> {
    std::fs::create_dir_all(dir)?;
    let name = format!("{subcommand}.csv");
    let bytes = table.to_csv(&manifest_name(subcommand));
    let path = dir.join(&name);
    std::fs::write(&path, &bytes)?;
    Ok((
        path,
        OutputRecord {
            path: name,
            sha256: sha256_hex(&bytes),
            rows: table.len(),
        },
    ))
}

pub fn write_manifest(dir: &Path, m: &ExperimentManifest) -> std::io::Result<PathBuf> {
    let path = dir.join(manifest_name(&m.subcommand));
    std::fs::write(&path, m.to_json() + "\n")?;
    Ok(path)
}
