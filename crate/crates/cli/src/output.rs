use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde_json::Value;
use sha2::{Digest, Sha256};

pub const ARTIFACT_VERSION: &str = concat!("qopen ", env!("CARGO_PKG_VERSION"));

/// Writes artifacts into one directory, stamping each with the config hash
/// and artifact version.
pub struct Artifacts {
    dir: PathBuf,
    config_hash: String,
    written: Vec<String>,
}

pub fn config_hash(canonical: &str) -> String {
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

impl Artifacts {
    pub fn create(dir: &Path, config_hash: String) -> io::Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            config_hash,
            written: Vec::new(),
        })
    }

    pub fn header(&self) -> String {
        format!("# {ARTIFACT_VERSION} config_sha256={}\n", self.config_hash)
    }

    /// CSV body preceded by the header row.
    pub fn csv(&mut self, name: &str, body: &str) -> io::Result<()> {
        let mut text = self.header();
        text.push_str(body);
        fs::write(self.dir.join(name), text)?;
        self.written.push(name.to_string());
        Ok(())
    }

    /// JSON summary; `artifact_version`, `config_sha256` and the list of
    /// files written so far are added to the object.
    pub fn summary(&mut self, name: &str, mut value: Value) -> io::Result<()> {
        if let Value::Object(map) = &mut value {
            map.insert("artifact_version".into(), ARTIFACT_VERSION.into());
            map.insert("config_sha256".into(), self.config_hash.clone().into());
            map.insert("files".into(), self.written.clone().into());
        }
        let mut text = serde_json::to_string_pretty(&value).map_err(io::Error::other)?;
        text.push('\n');
        fs::write(self.dir.join(name), text)?;
        self.written.push(name.to_string());
        Ok(())
    }
}
