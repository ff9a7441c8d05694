use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::radiomap::{Cell, GridSpec};

/// Axis-aligned box of cells around one (true or estimated) transmitter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRegion {
    pub tx_index: usize,
    pub center: Cell,
    /// Sorted flat indices.
    pub cells: Vec<usize>,
    /// Cells covered by no other region; sorted.
    pub exclusive_cells: Vec<usize>,
    /// Box extent after clipping, in blocks.
    pub dims: [usize; 3],
}

impl CorrelationRegion {
    pub fn contains(&self, idx: usize) -> bool {
        self.cells.binary_search(&idx).is_ok()
    }

    pub fn is_exclusive(&self, idx: usize) -> bool {
        self.exclusive_cells.binary_search(&idx).is_ok()
    }

    /// Divisor applied to this region's summed residuals: its cell count
    /// without the peak cell, whose own residual is identically zero.
    pub fn normalizer(&self) -> usize {
        self.cells.len().saturating_sub(1).max(1)
    }
}

fn clipped_range(c: usize, r: usize, n: usize) -> std::ops::Range<usize> {
    c.saturating_sub(r)..(c + r + 1).min(n)
}

pub fn build_regions(grid: &GridSpec, centers: &[Cell], radius: usize) -> Result<Vec<CorrelationRegion>> {
    if centers.is_empty() {
        return Err(Error::validation("regions need at least one transmitter"));
    }
    if let Some(c) = centers.iter().find(|c| !grid.contains(**c)) {
        return Err(Error::validation(format!("region centre {c:?} outside grid")));
    }
    let mut regions: Vec<CorrelationRegion> = centers
        .iter()
        .enumerate()
        .map(|(tx_index, &center)| {
            let r = [0, 1, 2].map(|a| clipped_range(center[a], radius, grid.blocks[a]));
            let mut cells = Vec::with_capacity(r.iter().map(|x| x.len()).product());
            for x in r[0].clone() {
                for y in r[1].clone() {
                    for z in r[2].clone() {
                        cells.push(grid.index([x, y, z]));
                    }
                }
            }
            cells.sort_unstable();
            let dims = r.map(|x| x.len());
            CorrelationRegion { tx_index, center, cells, exclusive_cells: Vec::new(), dims }
        })
        .collect();
    let cover = coverage(grid, &regions);
    for region in &mut regions {
        region.exclusive_cells = region.cells.iter().copied().filter(|&i| cover[i].len() == 1).collect();
    }
    Ok(regions)
}

/// For each flat cell, the indices of the regions containing it.
pub fn coverage(grid: &GridSpec, regions: &[CorrelationRegion]) -> Vec<Vec<usize>> {
    let mut cover = vec![Vec::new(); grid.n_blocks()];
    for (i, r) in regions.iter().enumerate() {
        for &c in &r.cells {
            cover[c].push(i);
        }
    }
    cover
}
