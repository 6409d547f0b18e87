//! Flat `f64` tensor archive: a little-endian binary blob plus a JSON
//! manifest listing each tensor's name, shape and byte offset.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ARCHIVE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub dtype: String,
    #[serde(default)]
    pub metadata: serde_json::Value,
    pub tensors: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TensorArchive {
    pub metadata: serde_json::Value,
    pub tensors: Vec<Tensor>,
}

impl TensorArchive {
    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.tensors.push(Tensor {
            name: name.into(),
            shape,
            data,
        });
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Format(format!("archive has no tensor '{name}'")))
    }

    pub fn save(&self, bin_path: impl AsRef<Path>, manifest_path: impl AsRef<Path>) -> Result<()> {
        let (bin_path, manifest_path) = (bin_path.as_ref(), manifest_path.as_ref());
        let mut blob = Vec::new();
        let mut entries = Vec::with_capacity(self.tensors.len());
        for t in &self.tensors {
            if t.shape.iter().product::<usize>() != t.data.len() {
                return Err(Error::Shape(format!("tensor '{}' shape/data mismatch", t.name)));
            }
            entries.push(ManifestEntry {
                name: t.name.clone(),
                shape: t.shape.clone(),
                offset: blob.len() as u64,
            });
            for v in &t.data {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
        let manifest = Manifest {
            version: ARCHIVE_VERSION,
            dtype: "f64le".into(),
            metadata: self.metadata.clone(),
            tensors: entries,
        };
        fs::write(bin_path, &blob).map_err(|e| Error::io(bin_path, e))?;
        let json = serde_json::to_vec_pretty(&manifest)?;
        fs::write(manifest_path, json).map_err(|e| Error::io(manifest_path, e))
    }

    pub fn load(bin_path: impl AsRef<Path>, manifest_path: impl AsRef<Path>) -> Result<Self> {
        let (bin_path, manifest_path) = (bin_path.as_ref(), manifest_path.as_ref());
        let json = fs::read(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
        let manifest: Manifest = serde_json::from_slice(&json)?;
        if manifest.version != ARCHIVE_VERSION || manifest.dtype != "f64le" {
            return Err(Error::Format(format!(
                "unsupported archive version {} / dtype {}",
                manifest.version, manifest.dtype
            )));
        }
        let blob = fs::read(bin_path).map_err(|e| Error::io(bin_path, e))?;
        let mut tensors = Vec::with_capacity(manifest.tensors.len());
        for entry in manifest.tensors {
            let n: usize = entry.shape.iter().product();
            let start = entry.offset as usize;
            let end = start + n * 8;
            let bytes = blob.get(start..end).ok_or_else(|| {
                Error::Format(format!("tensor '{}' runs past end of archive", entry.name))
            })?;
            let data = bytes
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                .collect();
            tensors.push(Tensor {
                name: entry.name,
                shape: entry.shape,
                data,
            });
        }
        Ok(Self {
            metadata: manifest.metadata,
            tensors,
        })
    }
}
