//! Air-to-ground link: Gray-mapped 64QAM over a single LoS tap with AWGN,
//! coherent hard decisions, and the byte layout of index payloads.

mod wire;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub use wire::{decode_payload, encode_payload};

/// Bits carried per 64QAM symbol.
pub const BITS_PER_SYMBOL: usize = 6;
const LEVELS: usize = 8;
/// Mean energy of the raw {±1, ±3, ±5, ±7}² grid.
const RAW_ENERGY: f64 = 42.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    /// Channel gain at 1 m.
    pub varpi: f64,
    /// LoS path-loss exponent.
    pub upsilon: f64,
    pub distance_m: f64,
    /// Receiver SNR; `f64::INFINITY` disables noise.
    pub snr_db: f64,
    pub rng_seed: u64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self { varpi: 1e-3, upsilon: 2.0, distance_m: 100.0, snr_db: 12.0, rng_seed: 0 }
    }
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.distance_m > 0.0 && self.upsilon >= 0.0 && self.varpi > 0.0) || self.snr_db.is_nan() {
            return Err(Error::validation(format!("invalid channel configuration {self:?}")));
        }
        Ok(())
    }

    /// `h = varpi * d0^-upsilon`.
    pub fn gain(&self) -> f64 {
        self.varpi * self.distance_m.powf(-self.upsilon)
    }

    /// Copy with the UAV distance drawn uniformly from [50, 500] m.
    pub fn with_random_distance(self, seed: u64) -> Self {
        use rand::Rng;
        let d = rng::seeded(seed).random_range(50.0..=500.0);
        Self { distance_m: d, ..self }
    }
}

/// Noise std-dev (complex, total) giving `snr_db` for received energy
/// `h² · symbol_energy`.
pub fn snr_to_noise_sigma(snr_db: f64, h: f64, symbol_energy: f64) -> f64 {
    if snr_db == f64::INFINITY {
        return 0.0;
    }
    (h * h * symbol_energy / 10f64.powf(snr_db / 10.0)).sqrt()
}

pub fn gray_encode(n: usize) -> usize {
    n ^ (n >> 1)
}

pub fn gray_decode(mut g: usize) -> usize {
    let mut n = g;
    while g > 1 {
        g >>= 1;
        n ^= g;
    }
    n
}

fn level(bits3: usize) -> f64 {
    (2 * gray_decode(bits3)) as f64 - 7.0
}

/// Unit-energy constellation point for a 6-bit label: high three bits on
/// I, low three on Q, each Gray-coded.
pub fn constellation_point(label: usize) -> (f64, f64) {
    let s = RAW_ENERGY.sqrt();
    (level(label >> 3) / s, level(label & 7) / s)
}

fn slice(v: f64) -> usize {
    let k = ((v * RAW_ENERGY.sqrt() + 7.0) / 2.0).round().clamp(0.0, (LEVELS - 1) as f64) as usize;
    gray_encode(k)
}

/// Nearest-point label for an equalized sample.
pub fn hard_decision(i: f64, q: f64) -> usize {
    (slice(i) << 3) | slice(q)
}

fn labels(bits: &[bool]) -> Vec<usize> {
    bits.chunks(BITS_PER_SYMBOL)
        .map(|c| {
            (0..BITS_PER_SYMBOL).fold(0, |acc, k| (acc << 1) | usize::from(c.get(k).copied().unwrap_or(false)))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkStats {
    pub symbols: usize,
    pub symbol_errors: usize,
}

/// Sends a bit string through the link; zero padding to a whole symbol is
/// stripped on return.
pub fn transmit_bits(bits: &[bool], cfg: &ChannelConfig) -> Result<(Vec<bool>, LinkStats)> {
    cfg.validate()?;
    let h = cfg.gain();
    let sigma = snr_to_noise_sigma(cfg.snr_db, h, 1.0) / std::f64::consts::SQRT_2;
    let noise = Normal::new(0.0, sigma).expect("sigma >= 0");
    let mut r = rng::seeded(cfg.rng_seed);
    let sent = labels(bits);
    let mut out = Vec::with_capacity(sent.len() * BITS_PER_SYMBOL);
    let mut errors = 0;
    for &label in &sent {
        let (i, q) = constellation_point(label);
        let (ni, nq) = if sigma > 0.0 { (noise.sample(&mut r), noise.sample(&mut r)) } else { (0.0, 0.0) };
        let got = hard_decision((h * i + ni) / h, (h * q + nq) / h);
        errors += usize::from(got != label);
        out.extend((0..BITS_PER_SYMBOL).rev().map(|k| (got >> k) & 1 == 1));
    }
    out.truncate(bits.len());
    Ok((out, LinkStats { symbols: sent.len(), symbol_errors: errors }))
}

/// Bits per index for a codebook of `size` entries.
pub fn index_bits(size: usize) -> Result<usize> {
    if size < 2 || !size.is_power_of_two() {
        return Err(Error::validation(format!("codebook size {size} is not a power of two >= 2")));
    }
    Ok(size.trailing_zeros() as usize)
}

fn index_bitstream(indices: &[Vec<usize>], sizes: &[usize]) -> Result<(Vec<bool>, Vec<usize>)> {
    if indices.len() != sizes.len() {
        return Err(Error::validation("one codebook size per scale is required"));
    }
    let mut bits = Vec::new();
    let mut widths = Vec::with_capacity(sizes.len());
    for (scale, (idx, &size)) in indices.iter().zip(sizes).enumerate() {
        let w = index_bits(size)?;
        widths.push(w);
        for &i in idx {
            if i >= size {
                return Err(Error::validation(format!("index {i} out of range {size} at scale {scale}")));
            }
            bits.extend((0..w).rev().map(|k| (i >> k) & 1 == 1));
        }
    }
    Ok((bits, widths))
}

/// Received indices per scale plus link statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Transmission {
    pub received: Vec<Vec<usize>>,
    pub stats: LinkStats,
    pub index_errors: usize,
}

/// Packs indices MSB first, scales in order, and sends them over the link.
pub fn transmit_indices(indices: &[Vec<usize>], sizes: &[usize], cfg: &ChannelConfig) -> Result<Transmission> {
    let (bits, widths) = index_bitstream(indices, sizes)?;
    let (rx, stats) = transmit_bits(&bits, cfg)?;
    let mut pos = 0;
    let mut received = Vec::with_capacity(indices.len());
    let mut index_errors = 0;
    for (idx, &w) in indices.iter().zip(&widths) {
        let mut scale = Vec::with_capacity(idx.len());
        for &sent in idx {
            let v = rx[pos..pos + w].iter().fold(0, |acc, &b| (acc << 1) | usize::from(b));
            pos += w;
            index_errors += usize::from(v != sent);
            scale.push(v);
        }
        received.push(scale);
    }
    Ok(Transmission { received, stats, index_errors })
}

/// Fixed-point step for sample transport: 1/256 dB in a signed 16-bit word.
pub const FIXED16_STEP_DB: f64 = 1.0 / 256.0;

/// Sends real-valued samples as 16-bit fixed point over the same link.
/// Values are clamped to the representable range (about ±128 dB).
pub fn transmit_samples_fixed16(values: &[f64], cfg: &ChannelConfig) -> Result<(Vec<f64>, LinkStats)> {
    let mut bits = Vec::with_capacity(values.len() * 16);
    for &v in values {
        let q = (v / FIXED16_STEP_DB).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16 as u16;
        bits.extend((0..16).rev().map(|k| (q >> k) & 1 == 1));
    }
    let (rx, stats) = transmit_bits(&bits, cfg)?;
    let out = rx
        .chunks(16)
        .map(|c| {
            let q = c.iter().fold(0u16, |acc, &b| (acc << 1) | u16::from(b)) as i16;
            q as f64 * FIXED16_STEP_DB
        })
        .collect();
    Ok((out, stats))
}
