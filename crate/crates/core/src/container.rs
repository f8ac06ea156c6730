//! Portable array container: raw little-endian f64 data in a `.bin` file,
//! indexed by a JSON sidecar manifest.
//!
//! The sidecar lists every array's name, shape and element offset, plus a
//! caller-supplied `meta` object (dataset spec, architecture, step counter,
//! RNG position, ...). Readers in any language need nothing beyond JSON and
//! `memcpy`.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{DrdgError, Result};
use crate::tensor::Tensor;

pub const CONTAINER_FORMAT: &str = "drdg-array-v1";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the data file, in f64 elements.
    pub offset: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContainerManifest {
    pub format: String,
    pub dtype: String,
    pub endianness: String,
    pub arrays: Vec<ArrayEntry>,
    #[serde(default)]
    pub meta: serde_json::Value,
}

/// In-memory ordered collection of named arrays.
#[derive(Debug, Clone, Default)]
pub struct ArrayContainer {
    arrays: Vec<(String, Tensor)>,
    index: BTreeMap<String, usize>,
}

impl ArrayContainer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor) {
        if let Some(&slot) = self.index.get(name) {
            self.arrays[slot].1 = tensor;
        } else {
            self.index.insert(name.to_string(), self.arrays.len());
            self.arrays.push((name.to_string(), tensor));
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.arrays[i].1)
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor> {
        let slot = self.index.remove(name)?;
        let (_, t) = self.arrays.remove(slot);
        for v in self.index.values_mut() {
            if *v > slot {
                *v -= 1;
            }
        }
        Some(t)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.arrays.iter().map(|(n, _)| n.as_str())
    }

    pub fn len(&self) -> usize {
        self.arrays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arrays.is_empty()
    }

    /// Write `<stem>.bin` and `<stem>.json`.
    pub fn save(&self, stem: &Path, meta: serde_json::Value) -> Result<()> {
        let bin_path = stem.with_extension("bin");
        let json_path = stem.with_extension("json");
        if let Some(dir) = bin_path.parent() {
            fs::create_dir_all(dir).map_err(|e| DrdgError::io(dir, e))?;
        }

        let mut entries = Vec::with_capacity(self.arrays.len());
        let mut offset = 0usize;
        let mut file =
            fs::File::create(&bin_path).map_err(|e| DrdgError::io(&bin_path, e))?;
        for (name, tensor) in &self.arrays {
            entries.push(ArrayEntry {
                name: name.clone(),
                shape: tensor.shape().to_vec(),
                offset,
            });
            let mut bytes = Vec::with_capacity(tensor.numel() * 8);
            for v in tensor.data() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            file.write_all(&bytes).map_err(|e| DrdgError::io(&bin_path, e))?;
            offset += tensor.numel();
        }

        let manifest = ContainerManifest {
            format: CONTAINER_FORMAT.to_string(),
            dtype: "f64".to_string(),
            endianness: "little".to_string(),
            arrays: entries,
            meta,
        };
        let json = serde_json::to_string_pretty(&manifest)?;
        fs::write(&json_path, json).map_err(|e| DrdgError::io(&json_path, e))?;
        Ok(())
    }

    /// Read a container written by [`ArrayContainer::save`].
    pub fn load(stem: &Path) -> Result<(ArrayContainer, ContainerManifest)> {
        let bin_path = stem.with_extension("bin");
        let json_path = stem.with_extension("json");
        let manifest: ContainerManifest = serde_json::from_str(
            &fs::read_to_string(&json_path).map_err(|e| DrdgError::io(&json_path, e))?,
        )?;
        if manifest.format != CONTAINER_FORMAT {
            return Err(DrdgError::Checkpoint(format!(
                "unsupported container format {:?}",
                manifest.format
            )));
        }
        if manifest.dtype != "f64" || manifest.endianness != "little" {
            return Err(DrdgError::Checkpoint(format!(
                "unsupported dtype/endianness {}/{}",
                manifest.dtype, manifest.endianness
            )));
        }
        let mut bytes = Vec::new();
        fs::File::open(&bin_path)
            .map_err(|e| DrdgError::io(&bin_path, e))?
            .read_to_end(&mut bytes)
            .map_err(|e| DrdgError::io(&bin_path, e))?;

        let mut container = ArrayContainer::new();
        for entry in &manifest.arrays {
            let numel: usize = entry.shape.iter().product();
            let start = entry.offset * 8;
            let end = start + numel * 8;
            if end > bytes.len() {
                return Err(DrdgError::Checkpoint(format!(
                    "array {:?} extends past end of {:?}",
                    entry.name, bin_path
                )));
            }
            let mut data = Vec::with_capacity(numel);
            for chunk in bytes[start..end].chunks_exact(8) {
                data.push(f64::from_le_bytes(chunk.try_into().expect("8 bytes")));
            }
            container.insert(&entry.name, Tensor::from_vec(&entry.shape, data)?);
        }
        Ok((container, manifest))
    }
}

/// `stem` plus the two concrete paths used on disk.
pub fn container_paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("bin"), stem.with_extension("json"))
}
