//! Inverse-distance-weighted completion.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::radiomap::{SampleMask, SpectrumMap};

pub const DEFAULT_IDW_POWER: f64 = 2.0;

/// Fills unmeasured voxels with `Σ v_i d_i^-p / Σ d_i^-p` over all measured
/// voxels (distances between block centres in metres). Measured voxels are
/// copied through.
pub fn idw_complete(masked: &SpectrumMap, mask: &SampleMask, p: f64) -> Result<SpectrumMap> {
    if mask.grid.blocks != masked.grid.blocks {
        return Err(Error::validation("mask shape does not match map"));
    }
    if !(p > 0.0) {
        return Err(Error::validation(format!("IDW power must be positive, got {p}")));
    }
    let grid = masked.grid;
    let samples: Vec<([f64; 3], f64)> = mask
        .measured
        .iter()
        .enumerate()
        .filter(|(_, &m)| m)
        .map(|(i, _)| (grid.center(grid.cell(i)), masked.values_dbm[i]))
        .collect();
    if samples.is_empty() {
        return Err(Error::validation("IDW needs at least one measured voxel"));
    }
    let values = (0..grid.n_blocks())
        .into_par_iter()
        .map(|i| {
            if mask.measured[i] {
                return masked.values_dbm[i];
            }
            let c = grid.center(grid.cell(i));
            let d: Vec<f64> = samples
                .iter()
                .map(|(s, _)| ((s[0] - c[0]).powi(2) + (s[1] - c[1]).powi(2) + (s[2] - c[2]).powi(2)).sqrt())
                .collect();
            // Weights relative to the nearest sample keep large p finite.
            let d_min = d.iter().copied().fold(f64::INFINITY, f64::min);
            let (mut num, mut den) = (0.0, 0.0);
            for (dk, (_, v)) in d.iter().zip(&samples) {
                let w = (d_min / dk).powf(p);
                num += w * v;
                den += w;
            }
            num / den
        })
        .collect();
    SpectrumMap::new(grid, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::radiomap::{generate_mask, GridSpec, MaskMode};

    fn toy_grid() -> GridSpec {
        GridSpec::new([20.0, 20.0, 10.0], [2, 2, 1]).unwrap()
    }

    fn masked(grid: GridSpec, vals: &[(usize, f64)]) -> (SpectrumMap, SampleMask) {
        let mut m = SpectrumMap::constant(grid, crate::radiomap::EMPTY_DBM);
        let mut measured = vec![false; grid.n_blocks()];
        for &(i, v) in vals {
            m.values_dbm[i] = v;
            measured[i] = true;
        }
        let mask = SampleMask { grid, measured, sampling_ratio: vals.len() as f64 / grid.n_blocks() as f64 };
        (m, mask)
    }

    #[test]
    fn single_sample_fills_everything() {
        let g = GridSpec::desk();
        let (m, mask) = masked(g, &[(123, -42.5)]);
        let out = idw_complete(&m, &mask, 2.0).unwrap();
        assert!(out.values_dbm.iter().all(|v| (v + 42.5).abs() < 1e-12));
    }

    #[test]
    fn equidistant_midpoint() {
        let g = GridSpec::new([30.0, 10.0, 10.0], [3, 1, 1]).unwrap();
        let (m, mask) = masked(g, &[(0, -10.0), (2, -30.0)]);
        for p in [0.5, 2.0, 7.0] {
            assert!((idw_complete(&m, &mask, p).unwrap().values_dbm[1] + 20.0).abs() < 1e-12);
        }
    }

    #[test]
    fn three_sample_hand_expansion() {
        // Cells (x,y): 0=(0,0), 1=(0,1), 2=(1,0), 3=(1,1); 10 m blocks.
        let g = toy_grid();
        let (m, mask) = masked(g, &[(0, 1.0), (1, 2.0), (2, 4.0)]);
        let out = idw_complete(&m, &mask, 2.0).unwrap();
        // Cell 3 sits 10√2 m from cell 0 and 10 m from cells 1 and 2.
        let (w0, w1, w2) = (1.0 / 200.0, 1.0 / 100.0, 1.0 / 100.0);
        let expect = (w0 * 1.0 + w1 * 2.0 + w2 * 4.0) / (w0 + w1 + w2);
        assert!((out.values_dbm[3] - expect).abs() < 1e-12);
        assert_eq!(&out.values_dbm[..3], &[1.0, 2.0, 4.0]);
    }

    #[test]
    fn convex_and_exact_on_random_masks() {
        let g = GridSpec::desk();
        let truth: Vec<f64> = (0..g.n_blocks()).map(|i| ((i * 7919) % 97) as f64 - 60.0).collect();
        for seed in 0..5 {
            let mask = generate_mask(&g, 0.1, MaskMode::Trajectory, seed).unwrap();
            let map = SpectrumMap::new(g, truth.clone()).unwrap();
            let m = crate::radiomap::apply_mask(&map, &mask).unwrap();
            let out = idw_complete(&m, &mask, 2.0).unwrap();
            let meas: Vec<f64> = (0..g.n_blocks()).filter(|&i| mask.measured[i]).map(|i| truth[i]).collect();
            let lo = meas.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = meas.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            for i in 0..g.n_blocks() {
                if mask.measured[i] {
                    assert_eq!(out.values_dbm[i], truth[i]);
                }
                assert!(out.values_dbm[i] >= lo - 1e-9 && out.values_dbm[i] <= hi + 1e-9);
            }
        }
    }

    #[test]
    fn large_power_approaches_nearest_sample() {
        let g = GridSpec::new([60.0, 10.0, 10.0], [6, 1, 1]).unwrap();
        let (m, mask) = masked(g, &[(0, -10.0), (5, -50.0)]);
        let out = idw_complete(&m, &mask, 20.0).unwrap();
        assert!((out.values_dbm[1] + 10.0).abs() < 1e-6);
        assert!((out.values_dbm[4] + 50.0).abs() < 1e-6);
    }

    #[test]
    fn validation() {
        let g = toy_grid();
        let (m, mask) = masked(g, &[]);
        assert!(idw_complete(&m, &mask, 2.0).is_err());
        let (m, mask) = masked(g, &[(0, 1.0)]);
        assert!(idw_complete(&m, &mask, 0.0).is_err());
    }
}
