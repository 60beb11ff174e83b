//! Run manifest: resolved config, timestamps and a hashed file inventory.

use std::fs;
use std::path::Path;

use fpk_core::TrainingConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub config: TrainingConfig,
    pub seed: Option<u64>,
    pub deterministic: bool,
    pub threads: usize,
    pub started: String,
    pub finished: String,
    pub files: Vec<FileEntry>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub fn sha256_hex(data: &[u8]) -> String {
    Sha256::digest(data)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Hashes every regular file in `dir` except `skip`, sorted by name.
pub fn inventory(dir: &Path, skip: &str) -> std::io::Result<Vec<FileEntry>> {
    let mut names: Vec<String> = fs::read_dir(dir)?
        .filter_map(Result::ok)
        .filter(|e| e.file_type().map(|t| t.is_file()).unwrap_or(false))
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n != skip)
        .collect();
    names.sort();
    names
        .into_iter()
        .map(|name| {
            let data = fs::read(dir.join(&name))?;
            Ok(FileEntry {
                bytes: data.len() as u64,
                sha256: sha256_hex(&data),
                path: name,
            })
        })
        .collect()
}

pub fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}
