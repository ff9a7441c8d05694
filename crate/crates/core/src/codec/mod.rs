//! Multi-scale vector-quantized transformer codec: patch embedding,
//! sparse-window attention, per-scale codebooks, coarse-to-fine decoding
//! and the masked-map index predictor.

mod geometry;
mod model;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use geometry::{
    attention_pairs, neighborhoods, token_cell, token_index, token_shape, window_radius, Geometry,
};
pub use model::{argmax_rows, lookup, nearest_codes, Anchors, Codec, QuantizedScale};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CodecConfig {
    /// Number of scales R.
    pub scales: usize,
    /// Patch edge in voxels.
    pub patch: usize,
    /// Window size in tokens per axis.
    pub n_win: usize,
    pub heads: usize,
    /// Transformer blocks per scale.
    pub depth: usize,
    /// Feature width C.
    pub width: usize,
    /// Entries per codebook L.
    pub codebook_size: usize,
    /// Maps are fed as `(dBm - norm_offset) / norm_scale`.
    pub norm_offset_db: f64,
    pub norm_scale_db: f64,
}

impl Default for CodecConfig {
    /// Desk-scale defaults.
    fn default() -> Self {
        Self {
            scales: 2,
            patch: 4,
            n_win: 4,
            heads: 2,
            depth: 1,
            width: 32,
            codebook_size: 256,
            norm_offset_db: -20.0,
            norm_scale_db: 20.0,
        }
    }
}

impl CodecConfig {
    /// Full-size network for 64 x 64 x 24 grids.
    pub fn full() -> Self {
        Self { scales: 3, n_win: 8, heads: 4, depth: 4, width: 64, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::validation(format!("codec config: {m}")));
        if self.scales == 0 {
            return bad("scales must be >= 1");
        }
        if self.patch == 0 || self.n_win == 0 || self.depth == 0 || self.width == 0 {
            return bad("patch, n_win, depth and width must be >= 1");
        }
        if self.heads == 0 || self.width % self.heads != 0 {
            return bad("width must be divisible by heads");
        }
        if self.codebook_size < 2 || !self.codebook_size.is_power_of_two() {
            return bad("codebook size must be a power of two >= 2");
        }
        if !(self.norm_scale_db > 0.0) {
            return bad("norm scale must be positive");
        }
        Ok(())
    }
}
