//! Append-only persistence: one directory per session holding
//! `manifest.json` and `ratings.jsonl`.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use neurongauge_core::aggregation::{parse_ratings_jsonl, write_ratings_jsonl, RatingRecord};
use neurongauge_core::{Error, Result};

use crate::session::Manifest;

pub const MANIFEST: &str = "manifest.json";
pub const RATINGS: &str = "ratings.jsonl";

#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
}

impl Store {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn session_dir(&self, id: &str) -> PathBuf {
        self.root.join(id)
    }

    pub fn ratings_path(&self, id: &str) -> PathBuf {
        self.session_dir(id).join(RATINGS)
    }

    /// Writes the manifest atomically and creates an empty ratings log.
    pub fn create(&self, manifest: &Manifest) -> Result<()> {
        let dir = self.session_dir(&manifest.session_id);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let tmp = dir.join("manifest.json.tmp");
        let body = serde_json::to_vec_pretty(manifest).map_err(|e| Error::Parse(e.to_string()))?;
        fs::write(&tmp, body).map_err(|e| Error::io(&tmp, e))?;
        let path = dir.join(MANIFEST);
        fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
        let log = dir.join(RATINGS);
        OpenOptions::new().create(true).append(true).open(&log).map_err(|e| Error::io(&log, e))?;
        Ok(())
    }

    /// Appends one submission's records in a single write and syncs.
    pub fn append(&self, id: &str, records: &[RatingRecord]) -> Result<()> {
        let path = self.ratings_path(id);
        let mut buf = Vec::new();
        write_ratings_jsonl(&mut buf, records).map_err(|e| Error::io(&path, e))?;
        let mut f = OpenOptions::new().append(true).open(&path).map_err(|e| Error::io(&path, e))?;
        f.write_all(&buf).map_err(|e| Error::io(&path, e))?;
        f.sync_data().map_err(|e| Error::io(&path, e))
    }

    pub fn read_log(&self, id: &str) -> Result<Vec<u8>> {
        let path = self.ratings_path(id);
        fs::read(&path).map_err(|e| Error::io(&path, e))
    }

    /// Every persisted session, ordered by id.
    pub fn load_all(&self) -> Result<Vec<(Manifest, Vec<RatingRecord>)>> {
        let mut dirs: Vec<PathBuf> = fs::read_dir(&self.root)
            .map_err(|e| Error::io(&self.root, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join(MANIFEST).is_file())
            .collect();
        dirs.sort();
        dirs.into_iter()
            .map(|dir| {
                let path = dir.join(MANIFEST);
                let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                let manifest: Manifest =
                    serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
                let log = dir.join(RATINGS);
                let records = if log.exists() { read_log_file(&log)? } else { Vec::new() };
                Ok((manifest, records))
            })
            .collect()
    }
}

/// Parses a ratings log, cutting off a trailing line left incomplete by a crash.
fn read_log_file(path: &Path) -> Result<Vec<RatingRecord>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let complete = match bytes.iter().rposition(|&b| b == b'\n') {
        Some(end) => &bytes[..=end],
        None => &bytes[..0],
    };
    if complete.len() < bytes.len() {
        tracing::warn!(path = %path.display(), "truncating torn final line in ratings log");
        let f = OpenOptions::new().write(true).open(path).map_err(|e| Error::io(path, e))?;
        f.set_len(complete.len() as u64).map_err(|e| Error::io(path, e))?;
    }
    parse_ratings_jsonl(complete, &path.display().to_string())
}
