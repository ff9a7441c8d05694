use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named, ordered collection of trainable tensors.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    lookup: HashMap<String, ParamId>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    dtype: String,
    byte_order: String,
    params: Vec<ManifestEntry>,
}

const FORMAT: &str = "specmap-params-v1";

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a tensor; panics on duplicate names.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(!self.lookup.contains_key(&name), "duplicate parameter {name}");
        let id = ParamId(self.values.len());
        self.lookup.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        id
    }

    /// Glorot-uniform initialised `(fan_in, fan_out)` weight.
    pub fn add_glorot<R: Rng>(
        &mut self,
        name: impl Into<String>,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> ParamId {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out).map(|_| rng.random_range(-limit..limit)).collect();
        self.add(name, Tensor::new(vec![fan_in, fan_out], data))
    }

    /// Uniform `(rows, cols)` tensor in `[-scale, scale)`.
    pub fn add_uniform<R: Rng>(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        scale: f64,
        rng: &mut R,
    ) -> ParamId {
        let data = (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect();
        self.add(name, Tensor::new(vec![rows, cols], data))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.lookup.get(name).copied()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.values.len()).map(ParamId)
    }

    /// Ids whose name starts with any of `prefixes`.
    pub fn ids_with_prefix<'a>(&'a self, prefixes: &'a [&str]) -> impl Iterator<Item = ParamId> + 'a {
        self.ids()
            .filter(move |id| prefixes.iter().any(|p| self.names[id.0].starts_with(p)))
    }

    pub fn total_values(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Order-sensitive FNV-1a digest of the bit patterns of the selected
    /// parameters.
    pub fn checksum(&self, prefixes: &[&str]) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for id in self.ids_with_prefix(prefixes) {
            for b in self.names[id.0].bytes() {
                h = (h ^ b as u64).wrapping_mul(0x100000001b3);
            }
            for v in self.values[id.0].data() {
                for b in v.to_bits().to_le_bytes() {
                    h = (h ^ b as u64).wrapping_mul(0x100000001b3);
                }
            }
        }
        h
    }

    /// Writes `<stem>.json` (manifest) and `<stem>.f64` (little-endian blob).
    pub fn save(&self, stem: &Path) -> Result<()> {
        let mut blob = Vec::with_capacity(self.total_values() * 8);
        let mut params = Vec::with_capacity(self.len());
        let mut offset = 0;
        for (name, t) in self.names.iter().zip(&self.values) {
            params.push(ManifestEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                offset,
                len: t.len(),
            });
            offset += t.len();
            for v in t.data() {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
        let manifest = Manifest {
            format: FORMAT.into(),
            dtype: "f64".into(),
            byte_order: "little".into(),
            params,
        };
        let json_path = stem.with_extension("json");
        let bin_path = stem.with_extension("f64");
        fs::write(&json_path, serde_json::to_vec_pretty(&manifest)?)
            .map_err(|e| Error::io(&json_path, e))?;
        fs::write(&bin_path, blob).map_err(|e| Error::io(&bin_path, e))?;
        Ok(())
    }

    pub fn load(stem: &Path) -> Result<Self> {
        let json_path = stem.with_extension("json");
        let bin_path = stem.with_extension("f64");
        let text = fs::read(&json_path).map_err(|e| Error::io(&json_path, e))?;
        let manifest: Manifest = serde_json::from_slice(&text)?;
        if manifest.format != FORMAT || manifest.dtype != "f64" {
            return Err(Error::Schema(format!(
                "{}: unsupported checkpoint format {} / {}",
                json_path.display(),
                manifest.format,
                manifest.dtype
            )));
        }
        let blob = fs::read(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
        let values: Vec<f64> = blob
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let mut store = Self::new();
        for p in manifest.params {
            if p.offset + p.len > values.len() || p.shape.iter().product::<usize>() != p.len {
                return Err(Error::Schema(format!(
                    "{}: parameter {} out of bounds",
                    bin_path.display(),
                    p.name
                )));
            }
            store.add(p.name, Tensor::new(p.shape, values[p.offset..p.offset + p.len].to_vec()));
        }
        Ok(store)
    }
}
