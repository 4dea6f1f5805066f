//! Run manifests: what was run, with which resolved parameters and seeds, and
//! the checksums of everything it wrote.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::stats::Verdict;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputFile {
    /// Relative to the directory holding the manifest.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictSummary {
    pub name: String,
    pub verdict: Verdict,
    pub detail: String,
}

impl VerdictSummary {
    pub fn new(name: impl Into<String>, verdict: Verdict, detail: impl Into<String>) -> Self {
        VerdictSummary { name: name.into(), verdict, detail: detail.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Every parameter after resolution, including defaults. Replaying feeds
    /// these back in as configuration.
    pub params: BTreeMap<String, String>,
    pub params_sha256: String,
    pub master_seed: u64,
    pub derived_seeds: Vec<u64>,
    pub workers: usize,
    pub started_at_ms: u64,
    pub finished_at_ms: u64,
    pub outputs: Vec<OutputFile>,
    pub verdicts: Vec<VerdictSummary>,
    pub version: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Digest of the `key=value` lines in key order.
pub fn params_digest(params: &BTreeMap<String, String>) -> String {
    let text: String = params.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
    sha256_hex(text.as_bytes())
}

pub fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

pub fn manifest_name(command: &str) -> String {
    format!("{command}.manifest.json")
}

impl RunManifest {
    pub fn worst_verdict(&self) -> Verdict {
        if self.verdicts.iter().any(|v| v.verdict == Verdict::Fail) {
            Verdict::Fail
        } else if self.verdicts.iter().any(|v| v.verdict == Verdict::Inconclusive) {
            Verdict::Inconclusive
        } else {
            Verdict::Pass
        }
    }

    pub fn params_intact(&self) -> bool {
        params_digest(&self.params) == self.params_sha256
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf, ManifestError> {
        let path = dir.join(manifest_name(&self.command));
        std::fs::write(&path, self.to_json() + "\n").map_err(|source| ManifestError::Io { path: path.clone(), source })?;
        Ok(path)
    }

    pub fn read(path: &Path) -> Result<RunManifest, ManifestError> {
        let text =
            std::fs::read_to_string(path).map_err(|source| ManifestError::Io { path: path.to_path_buf(), source })?;
        serde_json::from_str(&text).map_err(|source| ManifestError::Json { path: path.to_path_buf(), source })
    }
}

/// Differences between recorded and recomputed outputs, by path.
pub fn output_diff(recorded: &[OutputFile], fresh: &[OutputFile]) -> Vec<String> {
    let old: BTreeMap<&str, &OutputFile> = recorded.iter().map(|o| (o.path.as_str(), o)).collect();
    let new: BTreeMap<&str, &OutputFile> = fresh.iter().map(|o| (o.path.as_str(), o)).collect();
    let mut out = Vec::new();
    for (p, o) in &old {
        match new.get(p) {
            None => out.push(format!("{p}: missing from replay")),
            Some(n) if n.sha256 != o.sha256 => out.push(format!("{p}: sha256 {} -> {}", o.sha256, n.sha256)),
            _ => {}
        }
    }
    for p in new.keys().filter(|p| !old.contains_key(*p)) {
        out.push(format!("{p}: not in manifest"));
    }
    out
}
