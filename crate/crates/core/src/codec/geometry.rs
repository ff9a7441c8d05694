
use crate::autodiff::Neighborhoods;
use crate::radiomap::GridSpec;

/// Token layouts of every scale and the index maps between them.
#[derive(Debug, Clone)]
pub struct Geometry {
    pub grid: GridSpec,
    pub patch: usize,
    /// Token grid shape per scale, finest first.
    pub shapes: Vec<[usize; 3]>,
    /// For scale `s >= 1`: eight child rows per token into scale `s - 1`,
    /// x-major over the 2x2x2 block; missing children point at the extra
    /// zero row appended after the `n_{s-1}` real rows. Empty for `s = 0`.
    pub children: Vec<Vec<usize>>,
    /// For each voxel (grid flat order), its slot in the flattened
    /// `(tokens, patch³)` matrix of scale 0.
    pub voxel_slots: Vec<usize>,
}

pub fn token_shape(grid: &GridSpec, patch: usize, scale: usize) -> [usize; 3] {
    let stride = patch << scale;
    grid.blocks.map(|n| n.div_ceil(stride))
}

pub fn token_index(shape: [usize; 3], c: [usize; 3]) -> usize {
    (c[0] * shape[1] + c[1]) * shape[2] + c[2]
}

pub fn token_cell(shape: [usize; 3], i: usize) -> [usize; 3] {
    let z = i % shape[2];
    let r = i / shape[2];
    [r / shape[1], r % shape[1], z]
}

impl Geometry {
    pub fn new(grid: GridSpec, patch: usize, scales: usize) -> Self {
        let shapes: Vec<[usize; 3]> = (0..scales).map(|s| token_shape(&grid, patch, s)).collect();
        let mut children: Vec<Vec<usize>> = vec![Vec::new()];
        for s in 1..scales {
            let (fine, coarse) = (shapes[s - 1], shapes[s]);
            let pad = fine.iter().product::<usize>();
            let mut idx = Vec::with_capacity(8 * coarse.iter().product::<usize>());
            for t in 0..coarse.iter().product() {
                let c = token_cell(coarse, t);
                for dx in 0..2 {
                    for dy in 0..2 {
                        for dz in 0..2 {
                            let f = [2 * c[0] + dx, 2 * c[1] + dy, 2 * c[2] + dz];
                            let inside = (0..3).all(|a| f[a] < fine[a]);
                            idx.push(if inside { token_index(fine, f) } else { pad });
                        }
                    }
                }
            }
            children.push(idx);
        }
        let p = patch;
        let pv = p * p * p;
        let slots: Vec<usize> = grid
            .cells()
            .map(|c| {
                let t = token_index(shapes[0], [c[0] / p, c[1] / p, c[2] / p]);
                t * pv + ((c[0] % p) * p + c[1] % p) * p + c[2] % p
            })
            .collect();
        Self { grid, patch, shapes, children, voxel_slots: slots }
    }

    pub fn scales(&self) -> usize {
        self.shapes.len()
    }

    pub fn tokens(&self, scale: usize) -> usize {
        self.shapes[scale].iter().product()
    }

    pub fn patch_volume(&self) -> usize {
        self.patch.pow(3)
    }

    /// Occupancy per scale from per-voxel measurement flags: a scale-0 token
    /// is occupied iff any voxel in its patch is measured; coarser tokens iff
    /// any child is.
    pub fn occupancy(&self, measured: &[bool]) -> Vec<Vec<bool>> {
        let pv = self.patch_volume();
        let mut occ = vec![vec![false; self.tokens(0)]];
        for (v, &m) in measured.iter().enumerate() {
            if m {
                occ[0][self.voxel_slots[v] / pv] = true;
            }
        }
        for s in 1..self.scales() {
            let fine = &occ[s - 1];
            let n = fine.len();
            let o = self.children[s]
                .chunks(8)
                .map(|ch| ch.iter().any(|&i| i < n && fine[i]))
                .collect();
            occ.push(o);
        }
        occ
    }

    pub fn full_occupancy(&self) -> Vec<Vec<bool>> {
        (0..self.scales()).map(|s| vec![true; self.tokens(s)]).collect()
    }
}

/// Chebyshev radius of a window spanning `n_win` tokens per axis; the
/// window is centred, so even sizes round down to the odd size below.
pub fn window_radius(n_win: usize) -> usize {
    n_win.saturating_sub(1) / 2
}

/// Keys within the window for each occupied query; unoccupied queries get
/// an empty list.
pub fn neighborhoods(shape: [usize; 3], occupied: &[bool], radius: usize) -> Neighborhoods {
    let n: usize = shape.iter().product();
    (0..n)
        .map(|q| {
            if !occupied[q] {
                return Vec::new();
            }
            let c = token_cell(shape, q);
            let r = [0, 1, 2].map(|a| c[a].saturating_sub(radius)..(c[a] + radius + 1).min(shape[a]));
            let mut keys = Vec::new();
            for x in r[0].clone() {
                for y in r[1].clone() {
                    for z in r[2].clone() {
                        let k = token_index(shape, [x, y, z]);
                        if occupied[k] {
                            keys.push(k);
                        }
                    }
                }
            }
            keys
        })
        .collect()
}

/// Number of (query, key) score evaluations of windowed attention.
pub fn attention_pairs(shape: [usize; 3], occupied: &[bool], radius: usize) -> u64 {
    neighborhoods(shape, occupied, radius).iter().map(|k| k.len() as u64).sum()
}
