//! Ground-truth spectrum maps from free-space log-distance propagation,
//! trajectory-constrained UAV sampling masks, and on-disk datasets.

mod dataset;
mod mask;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub use dataset::{load_dataset, sample_dataset, Dataset, DatasetConfig, Record, RecordMeta};
pub use mask::{generate_mask, target_count, MaskMode, SampleMask};

/// Speed of light in m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Sentinel stored at unmeasured voxels of a masked map.
pub const EMPTY_DBM: f64 = -200.0;

/// Received linear power is clamped to this floor (watts) before the log.
pub const LINEAR_FLOOR_W: f64 = 1e-15;

pub type Cell = [usize; 3];

/// Cuboid monitoring space split into uniform blocks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Length, width, height in metres.
    pub extent_m: [f64; 3],
    /// Block counts along length, width, height.
    pub blocks: [usize; 3],
}

impl GridSpec {
    pub fn new(extent_m: [f64; 3], blocks: [usize; 3]) -> Result<Self> {
        if extent_m.iter().any(|e| !(*e > 0.0) || !e.is_finite()) {
            return Err(Error::validation(format!("grid extents must be positive, got {extent_m:?}")));
        }
        if blocks.contains(&0) {
            return Err(Error::validation(format!("grid block counts must be >= 1, got {blocks:?}")));
        }
        Ok(Self { extent_m, blocks })
    }

    /// 64 x 64 x 24 blocks over 160 x 160 x 120 m.
    pub fn full_scale() -> Self {
        Self { extent_m: [160.0, 160.0, 120.0], blocks: [64, 64, 24] }
    }

    /// 16 x 16 x 8 blocks over the same extents.
    pub fn desk() -> Self {
        Self { extent_m: [160.0, 160.0, 120.0], blocks: [16, 16, 8] }
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.iter().product()
    }

    pub fn block_size(&self) -> [f64; 3] {
        [0, 1, 2].map(|i| self.extent_m[i] / self.blocks[i] as f64)
    }

    /// Flat index in x-major, then y, then z order.
    pub fn index(&self, c: Cell) -> usize {
        (c[0] * self.blocks[1] + c[1]) * self.blocks[2] + c[2]
    }

    pub fn cell(&self, index: usize) -> Cell {
        let z = index % self.blocks[2];
        let rest = index / self.blocks[2];
        [rest / self.blocks[1], rest % self.blocks[1], z]
    }

    pub fn contains(&self, c: Cell) -> bool {
        (0..3).all(|i| c[i] < self.blocks[i])
    }

    pub fn center(&self, c: Cell) -> [f64; 3] {
        let s = self.block_size();
        [0, 1, 2].map(|i| (c[i] as f64 + 0.5) * s[i])
    }

    /// Euclidean distance in metres between block centres.
    pub fn distance(&self, a: Cell, b: Cell) -> f64 {
        let s = self.block_size();
        (0..3)
            .map(|i| ((a[i] as f64 - b[i] as f64) * s[i]).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.n_blocks()).map(|i| self.cell(i))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transmitter {
    pub cell: Cell,
    pub power_dbm: f64,
}

/// Checks bounds and the one-transmitter-per-block rule.
pub fn validate_transmitters(grid: &GridSpec, txs: &[Transmitter]) -> Result<()> {
    if txs.is_empty() {
        return Err(Error::validation("at least one transmitter is required"));
    }
    for (i, t) in txs.iter().enumerate() {
        if !grid.contains(t.cell) {
            return Err(Error::validation(format!("transmitter {i} at {:?} outside grid", t.cell)));
        }
        if !t.power_dbm.is_finite() {
            return Err(Error::validation(format!("transmitter {i} power is not finite")));
        }
        if txs[..i].iter().any(|o| o.cell == t.cell) {
            return Err(Error::validation(format!("duplicate transmitter cell {:?}", t.cell)));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PropagationParams {
    pub freq_hz: f64,
    /// Linear antenna gain.
    pub antenna_gain: f64,
    /// Std-dev of log-normal shadowing in dB.
    pub shadow_sigma_db: f64,
    /// Std-dev of additive received-power noise in watts.
    pub noise_sigma: f64,
    pub rng_seed: u64,
}

impl Default for PropagationParams {
    fn default() -> Self {
        Self { freq_hz: 75e6, antenna_gain: 1.0, shadow_sigma_db: 0.0, noise_sigma: 0.0, rng_seed: 0 }
    }
}

impl PropagationParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.freq_hz > 0.0
            && self.antenna_gain > 0.0
            && self.shadow_sigma_db >= 0.0
            && self.noise_sigma >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::validation(format!("invalid propagation parameters {self:?}")))
        }
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.freq_hz
    }

    /// Shadow-free path loss; `d_m` must be positive.
    pub fn path_loss_db(&self, d_m: f64) -> Result<f64> {
        path_loss_db(d_m, self, 0.0)
    }
}

/// Free-space log-distance path loss in dB plus a shadowing sample.
pub fn path_loss_db(d_m: f64, params: &PropagationParams, shadow_sample_db: f64) -> Result<f64> {
    if !(d_m > 0.0) {
        return Err(Error::validation(format!("path loss distance must be positive, got {d_m}")));
    }
    let lambda = params.wavelength();
    let ratio = params.antenna_gain * lambda * lambda / (4.0 * std::f64::consts::PI * d_m).powi(2);
    Ok(-10.0 * ratio.log10() + shadow_sample_db)
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn watts_to_dbm(w: f64) -> f64 {
    10.0 * w.log10() + 30.0
}

/// Dense received-power grid in dBm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumMap {
    pub grid: GridSpec,
    pub values_dbm: Vec<f64>,
}

impl SpectrumMap {
    pub fn new(grid: GridSpec, values_dbm: Vec<f64>) -> Result<Self> {
        if values_dbm.len() != grid.n_blocks() {
            return Err(Error::validation(format!(
                "map has {} values for {} blocks",
                values_dbm.len(),
                grid.n_blocks()
            )));
        }
        Ok(Self { grid, values_dbm })
    }

    pub fn constant(grid: GridSpec, value: f64) -> Self {
        Self { grid, values_dbm: vec![value; grid.n_blocks()] }
    }

    pub fn at(&self, c: Cell) -> f64 {
        self.values_dbm[self.grid.index(c)]
    }

    pub fn same_shape(&self, other: &SpectrumMap) -> Result<()> {
        if self.grid.blocks != other.grid.blocks {
            return Err(Error::validation(format!(
                "map shapes differ: {:?} vs {:?}",
                self.grid.blocks, other.grid.blocks
            )));
        }
        Ok(())
    }
}

/// Received power map from all transmitters.
///
/// Contributions are summed in watts. A transmitter's own block receives
/// its full transmit power (zero path loss) since the model diverges at
/// zero distance.
pub fn synthesize_map(
    grid: &GridSpec,
    txs: &[Transmitter],
    params: &PropagationParams,
) -> Result<SpectrumMap> {
    validate_transmitters(grid, txs)?;
    params.validate()?;
    let n = grid.n_blocks();
    let mut shadow_rng = rng::stream(params.rng_seed, 1);
    let mut noise_rng = rng::stream(params.rng_seed, 2);
    let shadow = Normal::new(0.0, params.shadow_sigma_db).expect("sigma >= 0");
    let noise = Normal::new(0.0, params.noise_sigma).expect("sigma >= 0");
    let mut linear = vec![0.0; n];
    for tx in txs {
        let p_w = dbm_to_watts(tx.power_dbm);
        for (idx, acc) in linear.iter_mut().enumerate() {
            let c = grid.cell(idx);
            if c == tx.cell {
                *acc += p_w;
                continue;
            }
            let g = if params.shadow_sigma_db > 0.0 { shadow.sample(&mut shadow_rng) } else { 0.0 };
            let pl = path_loss_db(grid.distance(tx.cell, c), params, g)?;
            *acc += 10f64.powf(-pl / 10.0) * p_w;
        }
    }
    let values_dbm = linear
        .into_iter()
        .map(|w| {
            let w = if params.noise_sigma > 0.0 { w + noise.sample(&mut noise_rng) } else { w };
            watts_to_dbm(w.max(LINEAR_FLOOR_W))
        })
        .collect();
    SpectrumMap::new(*grid, values_dbm)
}

/// Keeps measured voxels and writes [`EMPTY_DBM`] elsewhere.
pub fn apply_mask(map: &SpectrumMap, mask: &SampleMask) -> Result<SpectrumMap> {
    if map.grid.blocks != mask.grid.blocks {
        return Err(Error::validation(format!(
            "mask shape {:?} does not match map {:?}",
            mask.grid.blocks, map.grid.blocks
        )));
    }
    let values = map
        .values_dbm
        .iter()
        .zip(&mask.measured)
        .map(|(&v, &m)| if m { v } else { EMPTY_DBM })
        .collect();
    SpectrumMap::new(map.grid, values)
}
