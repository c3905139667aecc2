//! Buffered report emission: files are held in memory until the run
//! succeeds, then each is written to a temporary file in the output directory
//! and renamed into place.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use phi4_lsi::{Error, Result};

#[derive(Debug, Default)]
pub struct Emitter {
    files: BTreeMap<String, Vec<u8>>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    resolved_config_sha256: String,
    files: BTreeMap<String, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl Emitter {
    pub fn add(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.insert(name.to_string(), bytes);
    }

    pub fn add_with(&mut self, name: &str, write: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        write(&mut buf)?;
        self.add(name, buf);
        Ok(())
    }

    pub fn add_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Parse(e.to_string()))?;
        text.push('\n');
        self.add(name, text.into_bytes());
        Ok(())
    }

    /// Adds `resolved_config.toml` and `manifest.json`, then writes every file.
    pub fn commit(mut self, dir: &Path, command: &str, resolved: &str) -> Result<Vec<PathBuf>> {
        self.add("resolved_config.toml", resolved.as_bytes().to_vec());
        let files = self.files.iter().map(|(k, v)| (k.clone(), sha256_hex(v))).collect();
        let manifest = Manifest { command, resolved_config_sha256: sha256_hex(resolved.as_bytes()), files };
        self.add_json("manifest.json", &manifest)?;
        std::fs::create_dir_all(dir)?;
        let mut staged = Vec::with_capacity(self.files.len());
        for (name, bytes) in &self.files {
            let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
            tmp.write_all(bytes)?;
            tmp.as_file().sync_all()?;
            staged.push((tmp, dir.join(name)));
        }
        let mut written = Vec::with_capacity(staged.len());
        for (tmp, path) in staged {
            tmp.persist(&path).map_err(|e| Error::Io(e.error))?;
            written.push(path);
        }
        Ok(written)
    }
}
