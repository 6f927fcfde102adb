//! Checkpoint directories: `manifest.json` plus one little-endian `f64`
//! file per parameter.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::io::{read_f64_le, write_f64_le, write_json};

pub const MANIFEST: &str = "manifest.json";
pub const DTYPE: &str = "f64-le";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub params: Vec<ManifestEntry>,
}

fn file_name(index: usize, name: &str) -> String {
    let safe: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '_' { c } else { '_' })
        .collect();
    format!("{index:03}_{safe}.bin")
}

/// Writes `store` to `dir`, replacing any previous checkpoint there.
///
/// The files are written into a sibling staging directory that is renamed
/// into place, so an interrupted save never leaves a partial checkpoint at
/// `dir`.
pub fn save(store: &ParamStore, dir: &Path) -> Result<()> {
    let staging = sibling(dir, "partial");
    let retired = sibling(dir, "old");
    for stale in [&staging, &retired] {
        if stale.exists() {
            fs::remove_dir_all(stale).map_err(|e| Error::io(stale, e))?;
        }
    }
    fs::create_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;

    let mut entries = Vec::with_capacity(store.len());
    for (i, (_, p)) in store.iter().enumerate() {
        let file = file_name(i, &p.name);
        write_f64_le(&staging.join(&file), p.value.data())?;
        entries.push(ManifestEntry {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
            dtype: DTYPE.into(),
            file,
        });
    }
    let manifest = Manifest {
        format_version: 1,
        params: entries,
    };
    write_json(&staging.join(MANIFEST), &manifest)?;

    if dir.exists() {
        fs::rename(dir, &retired).map_err(|e| Error::io(dir, e))?;
    }
    fs::rename(&staging, dir).map_err(|e| Error::io(dir, e))?;
    if retired.exists() {
        fs::remove_dir_all(&retired).map_err(|e| Error::io(&retired, e))?;
    }
    Ok(())
}

pub fn load(dir: &Path) -> Result<ParamStore> {
    let manifest: Manifest = crate::io::read_json(&dir.join(MANIFEST))?;
    let mut store = ParamStore::new();
    for entry in manifest.params {
        if entry.dtype != DTYPE {
            return Err(Error::Data(format!(
                "parameter `{}` has unsupported dtype {}",
                entry.name, entry.dtype
            )));
        }
        let data = read_f64_le(&dir.join(&entry.file))?;
        let value = Tensor::new(entry.shape, data).map_err(|_| {
            Error::Data(format!("parameter `{}`: file size does not match shape", entry.name))
        })?;
        store.insert(entry.name, value)?;
    }
    Ok(store)
}

fn sibling(dir: &Path, suffix: &str) -> PathBuf {
    let mut name = dir.file_name().unwrap_or_default().to_os_string();
    name.push(format!(".{suffix}"));
    dir.with_file_name(name)
}
