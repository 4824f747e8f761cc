//! Parameter checkpoints: a JSON manifest next to a little-endian `f64` blob.
//!
//! `model.ckpt` holds the manifest (magic `CSDP1`, format version, RNG seed,
//! and per-parameter name, shape and byte offset); `model.ckpt.bin` holds the
//! concatenated parameter values.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{NumericsError, Tensor};

pub const CHECKPOINT_MAGIC: &str = "CSDP1";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Something that owns an ordered, named list of trainable tensors.
pub trait ParamSet {
    fn named_params(&self) -> Vec<(String, &Tensor)>;
    /// Same order as [`ParamSet::named_params`].
    fn params_mut(&mut self) -> Vec<&mut Tensor>;

    fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.len()).sum()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    magic: String,
    version: u32,
    seed: u64,
    blob: String,
    params: Vec<ParamEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub seed: u64,
    pub params: Vec<(String, Tensor)>,
}

pub fn blob_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".bin");
    PathBuf::from(s)
}

impl Checkpoint {
    pub fn from_params(ps: &impl ParamSet, seed: u64) -> Self {
        Self {
            seed,
            params: ps
                .named_params()
                .into_iter()
                .map(|(n, t)| (n, t.clone()))
                .collect(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), NumericsError> {
        let blob = blob_path(path);
        let mut bytes = Vec::new();
        let mut entries = Vec::with_capacity(self.params.len());
        for (name, t) in &self.params {
            entries.push(ParamEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                offset: bytes.len() as u64,
            });
            for v in t.data() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        let manifest = Manifest {
            magic: CHECKPOINT_MAGIC.into(),
            version: CHECKPOINT_VERSION,
            seed: self.seed,
            blob: blob
                .file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default(),
            params: entries,
        };
        fs::write(&blob, bytes)?;
        fs::write(path, serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, NumericsError> {
        let manifest: Manifest = serde_json::from_str(&fs::read_to_string(path)?)?;
        if manifest.magic != CHECKPOINT_MAGIC {
            return Err(NumericsError::Checkpoint(format!("bad magic {:?}", manifest.magic)));
        }
        if manifest.version != CHECKPOINT_VERSION {
            return Err(NumericsError::Checkpoint(format!("unsupported version {}", manifest.version)));
        }
        let blob_file = path.with_file_name(&manifest.blob);
        let bytes = fs::read(&blob_file)?;
        let mut params = Vec::with_capacity(manifest.params.len());
        for e in manifest.params {
            let n: usize = e.shape.iter().product();
            let start = e.offset as usize;
            let end = start + n * 8;
            if end > bytes.len() {
                return Err(NumericsError::Checkpoint(format!(
                    "blob too short for {} ({} bytes, need {end})",
                    e.name,
                    bytes.len()
                )));
            }
            let data = bytes[start..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            params.push((e.name, Tensor::new(data, e.shape)?));
        }
        Ok(Self {
            seed: manifest.seed,
            params,
        })
    }

    /// Copies stored values into `ps`, requiring identical names and shapes.
    pub fn restore_into(&self, ps: &mut impl ParamSet) -> Result<(), NumericsError> {
        let names: Vec<(String, Vec<usize>)> = ps
            .named_params()
            .into_iter()
            .map(|(n, t)| (n, t.shape().to_vec()))
            .collect();
        if names.len() != self.params.len() {
            return Err(NumericsError::Checkpoint(format!(
                "expected {} parameters, checkpoint has {}",
                names.len(),
                self.params.len()
            )));
        }
        for ((name, shape), (cname, ct)) in names.iter().zip(&self.params) {
            if name != cname || shape.as_slice() != ct.shape() {
                return Err(NumericsError::Checkpoint(format!(
                    "parameter mismatch: model {name} {shape:?}, checkpoint {cname} {:?}",
                    ct.shape()
                )));
            }
        }
        for (dst, (_, src)) in ps.params_mut().into_iter().zip(&self.params) {
            *dst = src.clone();
        }
        Ok(())
    }
}
