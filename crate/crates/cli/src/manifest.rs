//! Reproducibility manifest written next to every run's artifacts.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub name: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub code_version: String,
    pub experiment: Option<String>,
    pub started_at: String,
    pub finished_at: String,
    pub base_seed: Option<u64>,
    pub workers: usize,
    pub status: String,
    pub exit_code: i32,
    pub errors: Vec<String>,
    pub files: Vec<FileDigest>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Digests of the listed files inside `dir`, in the given order.
pub fn digest_files(dir: &Path, names: &[String]) -> std::io::Result<Vec<FileDigest>> {
    names
        .iter()
        .map(|name| {
            let bytes = std::fs::read(dir.join(name))?;
            Ok(FileDigest {
                name: name.clone(),
                sha256: sha256_hex(&bytes),
                bytes: bytes.len() as u64,
            })
        })
        .collect()
}

pub fn now() -> String {
    chrono::Utc::now().to_rfc3339()
}

impl RunManifest {
    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut s = serde_json::to_string_pretty(self).expect("serializable");
        s.push('\n');
        std::fs::write(dir.join("manifest.json"), s)
    }

    pub fn read(dir: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(dir.join("manifest.json"))?;
        serde_json::from_str(&text).map_err(std::io::Error::other)
    }
}
