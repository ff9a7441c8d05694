//! Byte layout of a multi-scale index payload.
//!
//! For each scale in order: `scale_id: u8`, `count: u32` little-endian, then
//! `count` indices of `log2(L)` bits each, packed MSB first and zero-padded
//! to a whole byte.

use super::index_bits;
use crate::error::{Error, Result};

pub fn encode_payload(indices: &[Vec<usize>], sizes: &[usize]) -> Result<Vec<u8>> {
    if indices.len() != sizes.len() || indices.len() > 256 {
        return Err(Error::validation("one codebook size per scale (at most 256 scales)"));
    }
    let mut out = Vec::new();
    for (scale, (idx, &size)) in indices.iter().zip(sizes).enumerate() {
        let w = index_bits(size)?;
        let count = u32::try_from(idx.len()).map_err(|_| Error::validation("too many tokens"))?;
        out.push(scale as u8);
        out.extend_from_slice(&count.to_le_bytes());
        let mut acc = 0u8;
        let mut filled = 0;
        for &i in idx {
            if i >= size {
                return Err(Error::validation(format!("index {i} out of range {size}")));
            }
            for k in (0..w).rev() {
                acc = (acc << 1) | ((i >> k) & 1) as u8;
                filled += 1;
                if filled == 8 {
                    out.push(acc);
                    acc = 0;
                    filled = 0;
                }
            }
        }
        if filled > 0 {
            out.push(acc << (8 - filled));
        }
    }
    Ok(out)
}

pub fn decode_payload(bytes: &[u8], sizes: &[usize]) -> Result<Vec<Vec<usize>>> {
    let mut pos = 0;
    let mut scales = Vec::with_capacity(sizes.len());
    for (scale, &size) in sizes.iter().enumerate() {
        let w = index_bits(size)?;
        let header = bytes
            .get(pos..pos + 5)
            .ok_or_else(|| Error::Schema(format!("payload truncated in header of scale {scale}")))?;
        if header[0] as usize != scale {
            return Err(Error::Schema(format!("expected scale id {scale}, found {}", header[0])));
        }
        let count = u32::from_le_bytes(header[1..5].try_into().unwrap()) as usize;
        pos += 5;
        let n_bytes = (count * w).div_ceil(8);
        let body = bytes
            .get(pos..pos + n_bytes)
            .ok_or_else(|| Error::Schema(format!("payload truncated in body of scale {scale}")))?;
        pos += n_bytes;
        let mut idx = Vec::with_capacity(count);
        let mut bit = 0;
        for _ in 0..count {
            let mut v = 0;
            for _ in 0..w {
                v = (v << 1) | ((body[bit / 8] >> (7 - bit % 8)) & 1) as usize;
                bit += 1;
            }
            idx.push(v);
        }
        scales.push(idx);
    }
    if pos != bytes.len() {
        return Err(Error::Schema(format!("{} trailing payload bytes", bytes.len() - pos)));
    }
    Ok(scales)
}
