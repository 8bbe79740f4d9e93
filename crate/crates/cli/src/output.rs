use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{InputFile, Metadata};
use crate::Failure;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Write through a temporary file in the target directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    let fail = |e: std::io::Error| Failure::runtime(format!("cannot write {}: {e}", path.display()));
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(fail)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(fail)?;
    tmp.write_all(bytes).map_err(fail)?;
    tmp.as_file().sync_all().map_err(fail)?;
    tmp.persist(path).map_err(|e| fail(e.error))?;
    Ok(())
}

pub fn sidecar_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".meta.json");
    output.with_file_name(name)
}

pub fn input_file(path: &Path) -> Result<InputFile, Failure> {
    let bytes = std::fs::read(path)
        .map_err(|e| Failure::invalid(format!("cannot read {}: {e}", path.display())))?;
    Ok(InputFile {
        path: path.display().to_string(),
        sha256: sha256_hex(&bytes),
    })
}

pub struct MetadataBuilder {
    meta: Metadata,
}

impl MetadataBuilder {
    pub fn new(command: &str, seed: u64, config: &impl Serialize) -> Result<Self, Failure> {
        let config = serde_json::to_value(config)
            .map_err(|e| Failure::runtime(format!("cannot serialize configuration: {e}")))?;
        let canonical = serde_json::to_vec(&config).expect("json value serializes");
        Ok(Self {
            meta: Metadata {
                command: command.into(),
                toolkit_version: patternkit_core::VERSION.into(),
                seed,
                config_sha256: sha256_hex(&canonical),
                config,
                inputs: vec![],
                outputs: vec![],
                notes: vec![],
            },
        })
    }

    pub fn input(&mut self, path: &Path) -> Result<&mut Self, Failure> {
        self.meta.inputs.push(input_file(path)?);
        Ok(self)
    }

    pub fn output(&mut self, name: impl Into<String>) -> &mut Self {
        self.meta.outputs.push(name.into());
        self
    }

    pub fn note(&mut self, note: impl Into<String>) -> &mut Self {
        self.meta.notes.push(note.into());
        self
    }

    pub fn write(&self, path: &Path) -> Result<(), Failure> {
        let mut text = serde_json::to_string_pretty(&self.meta).expect("metadata serializes");
        text.push('\n');
        write_atomic(path, text.as_bytes())
    }
}
