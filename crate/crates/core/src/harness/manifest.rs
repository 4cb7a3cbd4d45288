//! Provenance manifest: flat `key=value` text listing the config hash, seed,
//! generator, versions and a SHA-256 for every emitted file.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::seed::GENERATOR;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    entries: Vec<(String, String)>,
}

impl Manifest {
    pub fn new(config_text: String, seed: u64) -> Self {
        let mut m = Manifest::default();
        m.set("config_sha256", &sha256_hex(config_text.as_bytes()));
        m.set("base_seed", &seed.to_string());
        m.set("generator", GENERATOR);
        m.set("transgc_core_version", env!("CARGO_PKG_VERSION"));
        m.set("deviation", "none");
        m
    }

    /// Insert or replace `key`. Newlines in the value are flattened.
    pub fn set(&mut self, key: &str, value: &str) {
        let value = value.replace(['\n', '\r'], " ");
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(e) => e.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    /// Record `file.<name>=<sha256>` for a file that has been written.
    pub fn add_file(&mut self, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path).map_err(|e| Error::data(path, format!("cannot hash: {e}")))?;
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .ok_or_else(|| Error::data(path, "not a file"))?;
        self.set(&format!("file.{name}"), &sha256_hex(&bytes));
        Ok(())
    }

    /// `(name, hash)` of every listed file.
    pub fn files(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries
            .iter()
            .filter_map(|(k, v)| k.strip_prefix("file.").map(|n| (n, v.as_str())))
    }

    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::data(path, format!("cannot write manifest: {e}")))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::data(path, e.to_string()))?;
        let mut m = Manifest::default();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::data(path, format!("malformed manifest line '{line}'")))?;
            m.set(k, v);
        }
        Ok(m)
    }

    /// Recompute the hash of every listed file relative to `dir`.
    pub fn verify(&self, dir: &Path) -> Result<()> {
        for (name, hash) in self.files() {
            let path = dir.join(name);
            let bytes = std::fs::read(&path).map_err(|e| Error::data(&path, e.to_string()))?;
            if sha256_hex(&bytes) != hash {
                return Err(Error::data(&path, "content hash does not match the manifest"));
            }
        }
        Ok(())
    }
}
