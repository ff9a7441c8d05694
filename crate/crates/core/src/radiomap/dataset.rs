use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    apply_mask, generate_mask, synthesize_map, GridSpec, MaskMode, PropagationParams, SampleMask,
    SpectrumMap, Transmitter, EMPTY_DBM,
};
use crate::error::{Error, Result};
use crate::rng;

/// Generation settings for a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub count: usize,
    pub grid: GridSpec,
    /// Inclusive range of transmitter counts per map.
    pub tx_count_range: (usize, usize),
    pub power_pool_dbm: Vec<f64>,
    pub params: PropagationParams,
    pub tau: f64,
    pub mask_mode: MaskMode,
    /// Transmitters are placed in z layers `0..ground_layers`.
    pub ground_layers: usize,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            count: 16,
            grid: GridSpec::desk(),
            tx_count_range: (1, 3),
            power_pool_dbm: vec![26.0, 28.0, 30.0, 30.0, 28.0, 26.0],
            params: PropagationParams::default(),
            tau: 0.15,
            mask_mode: MaskMode::Trajectory,
            ground_layers: 1,
            seed: 0,
        }
    }
}

/// JSON sidecar describing one `<id>.f32` blob.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordMeta {
    pub id: String,
    pub grid: GridSpec,
    pub params: PropagationParams,
    pub transmitters: Vec<Transmitter>,
    pub tau: f64,
    pub mask_mode: MaskMode,
    pub seed: u64,
    pub mask_seed: u64,
    pub empty_dbm: f64,
    pub dtype: String,
    pub order: String,
    /// Arrays stored back to back in the blob.
    pub layout: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Record {
    pub meta: RecordMeta,
    pub map: SpectrumMap,
    pub masked: SpectrumMap,
    pub mask: SampleMask,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    format: String,
    config: DatasetConfig,
    ids: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub config: DatasetConfig,
    pub records: Vec<Record>,
}

const FORMAT: &str = "specmap-dataset-v1";

impl Record {
    /// Builds record `index` of `cfg` in memory.
    pub fn generate(cfg: &DatasetConfig, index: usize) -> Result<Self> {
        let seed = rng::derive_seed(cfg.seed, index as u64);
        let mut r = rng::seeded(seed);
        let grid = cfg.grid;
        let (lo, hi) = cfg.tx_count_range;
        let layers = cfg.ground_layers.clamp(1, grid.blocks[2]);
        let band = grid.blocks[0] * grid.blocks[1] * layers;
        if lo == 0 || hi < lo || hi > band {
            return Err(Error::validation(format!(
                "transmitter count range {lo}..={hi} invalid for {band} ground cells"
            )));
        }
        if cfg.power_pool_dbm.is_empty() {
            return Err(Error::validation("power pool is empty"));
        }
        let n_tx = r.random_range(lo..=hi);
        let transmitters: Vec<Transmitter> = index::sample(&mut r, band, n_tx)
            .into_iter()
            .map(|slot| {
                let z = slot % layers;
                let xy = slot / layers;
                let cell = [xy / grid.blocks[1], xy % grid.blocks[1], z];
                let power_dbm = cfg.power_pool_dbm[r.random_range(0..cfg.power_pool_dbm.len())];
                Transmitter { cell, power_dbm }
            })
            .collect();
        let params = PropagationParams { rng_seed: rng::derive_seed(seed, 1), ..cfg.params };
        let map = synthesize_map(&grid, &transmitters, &params)?;
        let mask_seed = rng::derive_seed(seed, 2);
        let mask = generate_mask(&grid, cfg.tau, cfg.mask_mode, mask_seed)?;
        let masked = apply_mask(&map, &mask)?;
        let meta = RecordMeta {
            id: format!("rec_{index:05}"),
            grid,
            params,
            transmitters,
            tau: cfg.tau,
            mask_mode: cfg.mask_mode,
            seed,
            mask_seed,
            empty_dbm: EMPTY_DBM,
            dtype: "f32-le".into(),
            order: "x-major".into(),
            layout: vec!["map".into(), "masked".into()],
        };
        Ok(Self { meta, map, masked, mask })
    }

    /// Copy of this record with a fresh mask at ratio `tau`.
    pub fn remasked(&self, tau: f64, mode: MaskMode, seed: u64) -> Result<Self> {
        let mask = generate_mask(&self.map.grid, tau, mode, seed)?;
        let masked = apply_mask(&self.map, &mask)?;
        let meta = RecordMeta { tau, mask_mode: mode, mask_seed: seed, ..self.meta.clone() };
        Ok(Self { meta, map: self.map.clone(), masked, mask })
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let json = dir.join(format!("{}.json", self.meta.id));
        let blob = dir.join(format!("{}.f32", self.meta.id));
        fs::write(&json, serde_json::to_vec_pretty(&self.meta)?).map_err(|e| Error::io(&json, e))?;
        let mut bytes = Vec::with_capacity(8 * self.map.values_dbm.len());
        for v in self.map.values_dbm.iter().chain(&self.masked.values_dbm) {
            bytes.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        fs::write(&blob, bytes).map_err(|e| Error::io(&blob, e))
    }

    pub fn read(dir: &Path, id: &str) -> Result<Self> {
        let json = dir.join(format!("{id}.json"));
        let blob = dir.join(format!("{id}.f32"));
        let text = fs::read(&json).map_err(|e| Error::io(&json, e))?;
        let meta: RecordMeta = serde_json::from_slice(&text)?;
        let n = meta.grid.n_blocks();
        if meta.layout != ["map", "masked"] || meta.dtype != "f32-le" || meta.order != "x-major" {
            return Err(Error::Schema(format!("{}: unsupported record layout", json.display())));
        }
        let bytes = fs::read(&blob).map_err(|e| Error::io(&blob, e))?;
        if bytes.len() != 2 * n * 4 {
            return Err(Error::Schema(format!(
                "{}: expected {} bytes, found {}",
                blob.display(),
                2 * n * 4,
                bytes.len()
            )));
        }
        let values: Vec<f64> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        let map = SpectrumMap::new(meta.grid, values[..n].to_vec())?;
        let masked = SpectrumMap::new(meta.grid, values[n..].to_vec())?;
        let measured: Vec<bool> = masked.values_dbm.iter().map(|&v| v != meta.empty_dbm).collect();
        let mask = SampleMask { grid: meta.grid, measured, sampling_ratio: meta.tau };
        Ok(Self { meta, map, masked, mask })
    }
}

/// Generates `cfg.count` records and writes them plus `dataset.json` into
/// `dir`. Each record draws from its own `(seed, index)` stream, so the
/// output does not depend on scheduling.
pub fn sample_dataset(cfg: &DatasetConfig, dir: &Path) -> Result<Dataset> {
    if cfg.count == 0 {
        return Err(Error::validation("dataset count must be >= 1"));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let records: Vec<Record> = (0..cfg.count)
        .into_par_iter()
        .map(|i| {
            let rec = Record::generate(cfg, i)?;
            rec.write(dir)?;
            Ok(rec)
        })
        .collect::<Result<_>>()?;
    let manifest = Manifest {
        format: FORMAT.into(),
        config: cfg.clone(),
        ids: records.iter().map(|r| r.meta.id.clone()).collect(),
    };
    let path = manifest_path(dir);
    fs::write(&path, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    Ok(Dataset { config: cfg.clone(), records })
}

fn manifest_path(dir: &Path) -> PathBuf {
    dir.join("dataset.json")
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let path = manifest_path(dir);
    let text = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_slice(&text)?;
    if manifest.format != FORMAT {
        return Err(Error::Schema(format!("{}: unknown format {}", path.display(), manifest.format)));
    }
    let records = manifest
        .ids
        .iter()
        .map(|id| Record::read(dir, id))
        .collect::<Result<_>>()?;
    Ok(Dataset { config: manifest.config, records })
}
