use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use neurongauge_core::{Error, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

/// Audit record written next to every output.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub seed: Option<u64>,
    /// SHA-256 of `config` serialized as compact JSON.
    pub config_digest: String,
    pub config: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub started_at: String,
    pub wall_clock_ms: u128,
}

pub fn digest_file(path: &Path) -> Result<FileDigest> {
    let mut f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    let mut bytes = 0u64;
    loop {
        let n = f.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
        bytes += n as u64;
    }
    Ok(FileDigest {
        path: path.display().to_string(),
        sha256: format!("{:x}", hasher.finalize()),
        bytes,
    })
}

pub fn digest_bytes(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

pub fn default_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

impl RunManifest {
    pub fn build(
        command: &str,
        config: serde_json::Value,
        seed: Option<u64>,
        inputs: &[PathBuf],
        outputs: &[PathBuf],
        started_at: DateTime<Utc>,
        wall_clock_ms: u128,
    ) -> Result<Self> {
        let digest_all = |paths: &[PathBuf]| paths.iter().map(|p| digest_file(p)).collect::<Result<Vec<_>>>();
        Ok(Self {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config_digest: digest_bytes(config.to_string().as_bytes()),
            config,
            inputs: digest_all(inputs)?,
            outputs: digest_all(outputs)?,
            started_at: started_at.to_rfc3339_opts(SecondsFormat::Millis, true),
            wall_clock_ms,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}
