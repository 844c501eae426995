//! Output directory with a checksummed manifest.

use std::fs;
use std::path::{Path, PathBuf};

use pwdpd_core::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub scenario: String,
    pub schema_version: u32,
    pub files: Vec<ManifestEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Collects files written under `root`; [`Bundle::finish`] hashes them.
pub struct Bundle {
    root: PathBuf,
    files: Vec<String>,
}

impl Bundle {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root)?;
        Ok(Self {
            root: root.to_path_buf(),
            files: vec![],
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Absolute path for `rel`, registered for the manifest. Parent
    /// directories are created.
    pub fn path(&mut self, rel: &str) -> Result<PathBuf> {
        if rel.is_empty() || rel == MANIFEST || Path::new(rel).is_absolute() || rel.split('/').any(|c| c == "..") {
            return Err(Error::config(format!("invalid bundle path '{rel}'")));
        }
        let p = self.root.join(rel);
        if let Some(dir) = p.parent() {
            fs::create_dir_all(dir)?;
        }
        if !self.files.iter().any(|f| f == rel) {
            self.files.push(rel.to_string());
        }
        Ok(p)
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let p = self.path(rel)?;
        fs::write(p, bytes)?;
        Ok(())
    }

    pub fn write_json<S: Serialize>(&mut self, rel: &str, value: &S) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(rel, text.as_bytes())
    }

    pub fn finish(mut self, scenario: &str, schema_version: u32) -> Result<Manifest> {
        self.files.sort();
        let mut files = Vec::with_capacity(self.files.len());
        for rel in &self.files {
            let bytes = fs::read(self.root.join(rel))?;
            files.push(ManifestEntry {
                path: rel.clone(),
                bytes: bytes.len() as u64,
                sha256: sha256_hex(&bytes),
            });
        }
        let m = Manifest {
            scenario: scenario.to_string(),
            schema_version,
            files,
        };
        let mut text = serde_json::to_string_pretty(&m)?;
        text.push('\n');
        fs::write(self.root.join(MANIFEST), text)?;
        Ok(m)
    }
}

/// Re-hashes every manifest entry; returns the paths that no longer match.
pub fn verify(root: &Path) -> Result<Vec<String>> {
    let m: Manifest = serde_json::from_slice(&fs::read(root.join(MANIFEST))?)?;
    let mut bad = vec![];
    for f in &m.files {
        match fs::read(root.join(&f.path)) {
            Ok(b) if sha256_hex(&b) == f.sha256 => {}
            _ => bad.push(f.path.clone()),
        }
    }
    Ok(bad)
}
