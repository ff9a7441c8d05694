use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::GridSpec;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskMode {
    /// Union of random axis-aligned flight segments at random altitudes.
    #[default]
    Trajectory,
    /// Voxels drawn uniformly without replacement.
    Uniform,
}

impl std::str::FromStr for MaskMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "trajectory" => Ok(Self::Trajectory),
            "uniform" => Ok(Self::Uniform),
            other => Err(Error::validation(format!("unknown mask mode {other:?}"))),
        }
    }
}

/// Voxels measured by the UAV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMask {
    pub grid: GridSpec,
    pub measured: Vec<bool>,
    pub sampling_ratio: f64,
}

impl SampleMask {
    pub fn full(grid: GridSpec) -> Self {
        Self { grid, measured: vec![true; grid.n_blocks()], sampling_ratio: 1.0 }
    }

    pub fn count(&self) -> usize {
        self.measured.iter().filter(|&&m| m).count()
    }
}

/// Number of measured voxels for ratio `tau`.
pub fn target_count(grid: &GridSpec, tau: f64) -> usize {
    ((tau * grid.n_blocks() as f64).round() as usize).clamp(1, grid.n_blocks())
}

pub fn generate_mask(grid: &GridSpec, tau: f64, mode: MaskMode, seed: u64) -> Result<SampleMask> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::validation(format!("sampling ratio must lie in (0, 1], got {tau}")));
    }
    let n = grid.n_blocks();
    let target = target_count(grid, tau);
    let mut measured = vec![false; n];
    let mut rng = rng::seeded(seed);
    if target == n {
        measured.fill(true);
    } else {
        match mode {
            MaskMode::Uniform => {
                for i in index::sample(&mut rng, n, target) {
                    measured[i] = true;
                }
            }
            MaskMode::Trajectory => fly_segments(grid, target, &mut measured, &mut rng),
        }
    }
    Ok(SampleMask { grid: *grid, measured, sampling_ratio: tau })
}

/// Adds horizontal segments until exactly `target` voxels are measured;
/// the final segment is cut short at the target.
fn fly_segments(grid: &GridSpec, target: usize, measured: &mut [bool], rng: &mut impl Rng) {
    let [nl, nw, nh] = grid.blocks;
    let mut count = 0;
    while count < target {
        let z = rng.random_range(0..nh);
        let along_x = nw == 1 || (nl > 1 && rng.random_bool(0.5));
        let (len_axis, other_axis) = if along_x { (nl, nw) } else { (nw, nl) };
        let fixed = rng.random_range(0..other_axis);
        let start = rng.random_range(0..len_axis);
        let len = rng.random_range(1..=len_axis - start);
        for s in start..start + len {
            let cell = if along_x { [s, fixed, z] } else { [fixed, s, z] };
            let idx = grid.index(cell);
            if !measured[idx] {
                measured[idx] = true;
                count += 1;
                if count == target {
                    break;
                }
            }
        }
    }
}
