use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::radiomap::{Cell, PropagationParams, SpectrumMap};

/// Local peaks of a reconstructed map taken as transmitter positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatedTransmitterSet {
    /// `(cell, value_dbm)`, strongest first.
    pub peaks: Vec<(Cell, f64)>,
    pub varphi: usize,
    pub zeta_db: f64,
}

impl EstimatedTransmitterSet {
    pub fn cells(&self) -> Vec<Cell> {
        self.peaks.iter().map(|p| p.0).collect()
    }
}

/// Cells that strictly dominate every neighbour within Chebyshev radius
/// `varphi` and whose drop to each neighbour matches the shadow-free path
/// loss within `zeta_db`. Neighbours outside the grid are ignored.
pub fn estimate_transmitters(
    recon: &SpectrumMap,
    varphi: usize,
    zeta_db: f64,
    params: &PropagationParams,
) -> Result<EstimatedTransmitterSet> {
    if varphi == 0 {
        return Err(Error::validation("peak radius varphi must be >= 1"));
    }
    if !(zeta_db > 0.0) {
        return Err(Error::validation(format!("peak tolerance zeta must be positive, got {zeta_db}")));
    }
    params.validate()?;
    let grid = recon.grid;
    let v = &recon.values_dbm;
    let r = varphi as i64;
    // Path loss per offset is the same everywhere; tabulate it once.
    let side = 2 * varphi + 1;
    let mut pl = vec![0.0; side * side * side];
    for dx in -r..=r {
        for dy in -r..=r {
            for dz in -r..=r {
                if (dx, dy, dz) == (0, 0, 0) {
                    continue;
                }
                let s = grid.block_size();
                let d = ((dx as f64 * s[0]).powi(2) + (dy as f64 * s[1]).powi(2) + (dz as f64 * s[2]).powi(2)).sqrt();
                pl[offset_index(dx, dy, dz, varphi)] = params.path_loss_db(d)?;
            }
        }
    }
    let mut peaks: Vec<(Cell, f64)> = (0..grid.n_blocks())
        .into_par_iter()
        .filter_map(|idx| {
            let c = grid.cell(idx);
            let here = v[idx];
            for dx in -r..=r {
                for dy in -r..=r {
                    for dz in -r..=r {
                        if (dx, dy, dz) == (0, 0, 0) {
                            continue;
                        }
                        let n = [c[0] as i64 + dx, c[1] as i64 + dy, c[2] as i64 + dz];
                        if (0..3).any(|a| n[a] < 0 || n[a] >= grid.blocks[a] as i64) {
                            continue;
                        }
                        let there = v[grid.index(n.map(|k| k as usize))];
                        if !(here > there) {
                            return None;
                        }
                        if ((here - there) - pl[offset_index(dx, dy, dz, varphi)]).abs() >= zeta_db {
                            return None;
                        }
                    }
                }
            }
            Some((c, here))
        })
        .collect();
    peaks.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(EstimatedTransmitterSet { peaks, varphi, zeta_db })
}

fn offset_index(dx: i64, dy: i64, dz: i64, varphi: usize) -> usize {
    let side = 2 * varphi as i64 + 1;
    let r = varphi as i64;
    (((dx + r) * side + (dy + r)) * side + (dz + r)) as usize
}
