//! Parameter blobs: one flat little-endian `f64` file plus a JSON manifest
//! naming each tensor's shape and element offset.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::bcfn::BcfParams;
use super::ldam::{LaaParams, LdamParams, SsaParams};
use super::ops::{Conv1x1, ConvKxK};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct BlobEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamBlob {
    pub entries: Vec<BlobEntry>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    dtype: String,
    tensors: Vec<ManifestEntry>,
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

const DTYPE: &str = "f64-le";

impl ParamBlob {
    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) {
        self.entries.push(BlobEntry {
            name: name.into(),
            shape,
            data,
        });
    }

    pub fn get(&self, name: &str) -> Result<&BlobEntry> {
        self.entries
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| Error::InvalidInput(format!("blob has no tensor `{name}`")))
    }

    fn copy_into(&self, name: &str, dst: &mut [f64]) -> Result<()> {
        let e = self.get(name)?;
        if e.data.len() != dst.len() {
            return Err(Error::Shape(format!("`{name}` has {} values, expected {}", e.data.len(), dst.len())));
        }
        dst.copy_from_slice(&e.data);
        Ok(())
    }

    /// Writes `<bin>` and the manifest `<manifest>`.
    pub fn save(&self, bin: &Path, manifest: &Path) -> Result<()> {
        let mut bytes = Vec::new();
        let mut tensors = Vec::with_capacity(self.entries.len());
        let mut offset = 0;
        for e in &self.entries {
            for v in &e.data {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            tensors.push(ManifestEntry {
                name: e.name.clone(),
                shape: e.shape.clone(),
                offset,
                len: e.data.len(),
            });
            offset += e.data.len();
        }
        let m = Manifest {
            dtype: DTYPE.into(),
            tensors,
        };
        fs::write(bin, bytes).map_err(|e| Error::io(bin, e))?;
        fs::write(manifest, serde_json::to_string_pretty(&m)? + "\n").map_err(|e| Error::io(manifest, e))?;
        Ok(())
    }

    pub fn load(bin: &Path, manifest: &Path) -> Result<Self> {
        let bytes = fs::read(bin).map_err(|e| Error::io(bin, e))?;
        let text = fs::read_to_string(manifest).map_err(|e| Error::io(manifest, e))?;
        let m: Manifest = serde_json::from_str(&text)?;
        if m.dtype != DTYPE {
            return Err(Error::InvalidInput(format!("unsupported blob dtype `{}`", m.dtype)));
        }
        if bytes.len() % 8 != 0 {
            return Err(Error::InvalidInput("blob length is not a multiple of 8".into()));
        }
        let values: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let entries = m
            .tensors
            .into_iter()
            .map(|t| {
                if t.shape.iter().product::<usize>() != t.len {
                    return Err(Error::Shape(format!("`{}`: shape {:?} vs len {}", t.name, t.shape, t.len)));
                }
                let data = values
                    .get(t.offset..t.offset + t.len)
                    .ok_or_else(|| Error::InvalidInput(format!("`{}` runs past the end of the blob", t.name)))?
                    .to_vec();
                Ok(BlobEntry {
                    name: t.name,
                    shape: t.shape,
                    data,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { entries })
    }
}

/// Named export/import of a parameter set.
pub trait NamedParams {
    fn export(&self, prefix: &str, blob: &mut ParamBlob);
    fn import(&mut self, prefix: &str, blob: &ParamBlob) -> Result<()>;
}

impl NamedParams for Conv1x1 {
    fn export(&self, prefix: &str, blob: &mut ParamBlob) {
        blob.push(format!("{prefix}.weight"), vec![self.out_ch, self.in_ch], self.weight.clone());
        blob.push(format!("{prefix}.bias"), vec![self.out_ch], self.bias.clone());
    }

    fn import(&mut self, prefix: &str, blob: &ParamBlob) -> Result<()> {
        blob.copy_into(&format!("{prefix}.weight"), &mut self.weight)?;
        blob.copy_into(&format!("{prefix}.bias"), &mut self.bias)
    }
}

impl NamedParams for ConvKxK {
    fn export(&self, prefix: &str, blob: &mut ParamBlob) {
        blob.push(
            format!("{prefix}.weight"),
            vec![self.out_ch, self.in_ch, self.k, self.k],
            self.weight.clone(),
        );
    }

    fn import(&mut self, prefix: &str, blob: &ParamBlob) -> Result<()> {
        blob.copy_into(&format!("{prefix}.weight"), &mut self.weight)
    }
}

impl NamedParams for BcfParams {
    fn export(&self, prefix: &str, blob: &mut ParamBlob) {
        self.f.export(&format!("{prefix}.f"), blob);
        self.g.export(&format!("{prefix}.g"), blob);
        self.h.export(&format!("{prefix}.h"), blob);
    }

    fn import(&mut self, prefix: &str, blob: &ParamBlob) -> Result<()> {
        self.f.import(&format!("{prefix}.f"), blob)?;
        self.g.import(&format!("{prefix}.g"), blob)?;
        self.h.import(&format!("{prefix}.h"), blob)
    }
}

impl NamedParams for LaaParams {
    fn export(&self, prefix: &str, blob: &mut ParamBlob) {
        self.producer.export(&format!("{prefix}.producer"), blob);
        self.reducer.export(&format!("{prefix}.reducer"), blob);
    }

    fn import(&mut self, prefix: &str, blob: &ParamBlob) -> Result<()> {
        self.producer.import(&format!("{prefix}.producer"), blob)?;
        self.reducer.import(&format!("{prefix}.reducer"), blob)
    }
}

impl NamedParams for SsaParams {
    fn export(&self, prefix: &str, blob: &mut ParamBlob) {
        self.kernel.export(&format!("{prefix}.kernel"), blob);
        blob.push(format!("{prefix}.layer_scale"), vec![self.layer_scale.len()], self.layer_scale.clone());
    }

    fn import(&mut self, prefix: &str, blob: &ParamBlob) -> Result<()> {
        self.kernel.import(&format!("{prefix}.kernel"), blob)?;
        blob.copy_into(&format!("{prefix}.layer_scale"), &mut self.layer_scale)
    }
}

impl NamedParams for LdamParams {
    fn export(&self, prefix: &str, blob: &mut ParamBlob) {
        self.laa.export(&format!("{prefix}.laa"), blob);
        self.ssa.export(&format!("{prefix}.ssa"), blob);
    }

    fn import(&mut self, prefix: &str, blob: &ParamBlob) -> Result<()> {
        self.laa.import(&format!("{prefix}.laa"), blob)?;
        self.ssa.import(&format!("{prefix}.ssa"), blob)
    }
}
