//! Run manifest: one line per stage run (`stage <name> <unix seconds>`) and
//! per emitted file (`file <stage> <relative path> <sha256>`).

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MANIFEST_NAME: &str = "manifest.txt";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub stage: String,
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RunManifest {
    pub stages: Vec<(String, u64)>,
    pub files: Vec<ManifestEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn hash_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

impl RunManifest {
    /// Reads `dir/manifest.txt`, or an empty manifest if there is none.
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_NAME);
        match std::fs::read_to_string(&path) {
            Ok(text) => Self::parse(&text, &path),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Self::default()),
            Err(e) => Err(Error::io(&path, e)),
        }
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut m = Self::default();
        let mut offset = 0u64;
        for line in text.lines() {
            let err = |msg: &str| Error::Parse {
                path: path.to_path_buf(),
                offset,
                message: msg.to_string(),
            };
            let parts: Vec<&str> = line.split_whitespace().collect();
            match parts.as_slice() {
                [] => {}
                ["stage", name, t] => m.stages.push((
                    name.to_string(),
                    t.parse().map_err(|_| err("bad timestamp"))?,
                )),
                ["file", stage, p, h] => m.files.push(ManifestEntry {
                    stage: stage.to_string(),
                    path: p.to_string(),
                    sha256: h.to_string(),
                }),
                _ => return Err(err("unrecognized manifest line")),
            }
            offset += line.len() as u64 + 1;
        }
        Ok(m)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (name, t) in &self.stages {
            let _ = writeln!(s, "stage {name} {t}");
        }
        for f in &self.files {
            let _ = writeln!(s, "file {} {} {}", f.stage, f.path, f.sha256);
        }
        s
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_NAME);
        std::fs::write(&path, self.to_text()).map_err(|e| Error::io(&path, e))
    }

    /// Drops earlier records of `stage` and stamps it with the current time.
    pub fn begin_stage(&mut self, stage: &str) {
        self.stages.retain(|(s, _)| s != stage);
        self.files.retain(|f| f.stage != stage);
        let now = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs());
        self.stages.push((stage.to_string(), now));
    }

    /// Hashes `dir/rel` and pins it under `stage`.
    pub fn record(&mut self, dir: &Path, stage: &str, rel: &str) -> Result<()> {
        let sha256 = hash_file(&dir.join(rel))?;
        self.files.retain(|f| f.path != rel);
        self.files.push(ManifestEntry {
            stage: stage.to_string(),
            path: rel.to_string(),
            sha256,
        });
        Ok(())
    }

    pub fn entry(&self, rel: &str) -> Option<&ManifestEntry> {
        self.files.iter().find(|f| f.path == rel)
    }

    /// Checks that `dir/rel` is pinned and still matches its hash.
    pub fn verify(&self, dir: &Path, rel: &str) -> Result<PathBuf> {
        let entry = self.entry(rel).ok_or_else(|| {
            Error::invalid(format!(
                "{rel} is not recorded in the manifest; run the producing stage first"
            ))
        })?;
        let path = dir.join(rel);
        let actual = hash_file(&path)?;
        if actual != entry.sha256 {
            return Err(Error::invalid(format!(
                "{}: hash mismatch against manifest (expected {}, found {actual})",
                path.display(),
                entry.sha256
            )));
        }
        Ok(path)
    }

    /// Verifies every pinned file.
    pub fn verify_all(&self, dir: &Path) -> Result<()> {
        for f in &self.files {
            self.verify(dir, &f.path)?;
        }
        Ok(())
    }
}
