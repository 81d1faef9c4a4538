use std::fs;
use std::io::Write;
use std::path::PathBuf;

use anyhow::Context;
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const SCHEMA_VERSION: u32 = 1;

/// Output directory that remembers every artifact written to it.
pub struct Output {
    dir: PathBuf,
    files: Vec<String>,
}

#[derive(Serialize)]
struct Entry {
    path: String,
    bytes: u64,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    schema: &'a str,
    version: u32,
    cellshock: &'a str,
    command: &'a str,
    artifacts: Vec<Entry>,
}

impl Output {
    pub fn create(dir: PathBuf) -> anyhow::Result<Self> {
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self { dir, files: Vec::new() })
    }

    /// Path for an artifact that a library routine writes itself.
    pub fn path(&mut self, name: &str) -> PathBuf {
        if !self.files.iter().any(|f| f == name) {
            self.files.push(name.to_string());
        }
        self.dir.join(name)
    }

    pub fn write_text(&mut self, name: &str, text: &str) -> anyhow::Result<()> {
        let path = self.path(name);
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, schema: &str, value: &T) -> anyhow::Result<()> {
        let mut doc = serde_json::to_value(value)?;
        if let serde_json::Value::Object(map) = &mut doc {
            map.insert("schema".into(), format!("cellshock.{schema}").into());
            map.insert("version".into(), SCHEMA_VERSION.into());
        }
        let mut text = serde_json::to_string_pretty(&doc)?;
        text.push('\n');
        self.write_text(name, &text)
    }

    pub fn write_manifest(&self, command: &str) -> anyhow::Result<()> {
        let mut artifacts = Vec::with_capacity(self.files.len());
        for name in &self.files {
            let path = self.dir.join(name);
            // A stage that failed half way may have registered a file it never wrote.
            let Ok(data) = fs::read(&path) else { continue };
            artifacts.push(Entry { path: name.clone(), bytes: data.len() as u64, sha256: hex(&Sha256::digest(&data)) });
        }
        let manifest = Manifest { schema: "cellshock.manifest", version: SCHEMA_VERSION, cellshock: env!("CARGO_PKG_VERSION"), command, artifacts };
        let mut f = fs::File::create(self.dir.join("manifest.json"))?;
        serde_json::to_writer_pretty(&mut f, &manifest)?;
        writeln!(f)?;
        Ok(())
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
