//! On-disk formats and experiment directories. Every write goes to a
//! temporary file in the destination directory and is renamed into place.

mod experiment;
mod features;
mod manifest;

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

pub use experiment::{ExperimentDir, ResumePoint, DONE_MARKER};
pub use features::{decode_features, encode_features, read_features, write_features, FEATURE_MAGIC};
pub use manifest::{
    read_corpus, read_pseudo_set, write_corpus, write_pseudo_set, ManifestEntry, PSEUDO_MANIFEST, PSEUDO_STATS,
};

use crate::error::{Error, Result};
use crate::numkit::ModelCheckpoint;

/// Writes `bytes` to `path` atomically, creating parent directories.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Error::Json {
        path: path.into(),
        source: e,
    })?;
    bytes.push(b'\n');
    atomic_write(path, &bytes)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_slice(&read_bytes(path)?).map_err(|e| Error::Json {
        path: path.into(),
        source: e,
    })
}

pub fn write_toml<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = toml::to_string_pretty(value).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    atomic_write(path, text.as_bytes())
}

pub fn read_toml<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = read_bytes(path)?;
    let text = std::str::from_utf8(&bytes).map_err(|e| Error::format(path, e.valid_up_to() as u64, "not UTF-8"))?;
    toml::from_str(text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

pub fn write_checkpoint(path: &Path, ckpt: &ModelCheckpoint) -> Result<()> {
    atomic_write(path, &ckpt.to_bytes())
}

pub fn read_checkpoint(path: &Path) -> Result<ModelCheckpoint> {
    ModelCheckpoint::from_bytes(&read_bytes(path)?, path)
}
