//! Reconstruction metrics and physics-aware losses.
//!
//! The knowledge losses all share one shape: for every cell of every
//! correlation region, a linear combination of map values (peak cells minus
//! the cell) is compared with a target. [`KnowledgeTerms`] stores that
//! structure once so the same terms can be evaluated on plain maps and
//! inside an autodiff graph.

mod peaks;
mod regions;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, SparseRows, Tensor, Var};
use crate::error::{Error, Result};
use crate::radiomap::{GridSpec, PropagationParams, SampleMask, SpectrumMap, Transmitter};

pub use peaks::{estimate_transmitters, EstimatedTransmitterSet};
pub use regions::{build_regions, coverage, CorrelationRegion};

/// Default half-width of a correlation box at test scale.
pub const DEFAULT_REGION_RADIUS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub kappa: f64,
    pub w_k: f64,
    pub w_c: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { kappa: 0.5, w_k: 0.5, w_c: 1.0, gamma: 0.25 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa > 0.0 && self.kappa < 1.0) {
            return Err(Error::validation(format!("kappa must lie in (0, 1), got {}", self.kappa)));
        }
        if !(self.w_k >= 0.0 && self.w_c >= 0.0 && self.gamma >= 0.0) {
            return Err(Error::validation("loss weights must be non-negative"));
        }
        Ok(())
    }
}

/// Residual used by the supervised knowledge loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KnowledgeForm {
    /// Penalizes only decay-direction violations:
    /// `[min(0, Δ̂) - min(0, Δ)]²` where `Δ = Ω(x_T) - Ω(x)`.
    #[default]
    Direction,
    /// Matches the decay magnitude: `[Δ - Δ̂]²`.
    Decay,
}

impl std::str::FromStr for KnowledgeForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "direction" => Ok(Self::Direction),
            "decay" => Ok(Self::Decay),
            other => Err(Error::validation(format!("unknown knowledge form {other:?}"))),
        }
    }
}

/// `loss = Σ_k w_k (f(a_k) - t_k)²` with `a = rows · Ω̂` and `f` either the
/// identity or `min(0, ·)`.
///
/// A term for cell `x` acted on by peaks `S` has
/// `a = Σ_{j∈S} (Ω̂(x_j) - Ω̂(x))`, so every row sums to zero and the loss
/// ignores constant offsets of the map.
#[derive(Debug, Clone, Default)]
pub struct KnowledgeTerms {
    pub rows: Arc<SparseRows>,
    pub weights: Vec<f64>,
    pub targets: Vec<f64>,
    pub clamp_negative: bool,
}

impl KnowledgeTerms {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn evaluate(&self, recon: &[f64]) -> f64 {
        let mut total = 0.0;
        for ((row, w), t) in self.rows.rows.iter().zip(&self.weights).zip(&self.targets) {
            let mut a: f64 = row.iter().map(|&(i, c)| c * recon[i]).sum();
            if self.clamp_negative {
                a = a.min(0.0);
            }
            total += w * (a - t).powi(2);
        }
        total
    }

    /// Same loss as [`evaluate`](Self::evaluate) on a graph value holding the
    /// flattened map in dBm.
    pub fn graph_loss(&self, g: &mut Graph, recon: Var) -> Result<Var> {
        if self.is_empty() {
            return Ok(g.constant(Tensor::scalar(0.0)));
        }
        let mut a = g.sparse_linear(recon, self.rows.clone())?;
        if self.clamp_negative {
            let neg = g.scale(a, -1.0);
            let r = g.relu(neg);
            a = g.scale(r, -1.0);
        }
        let t = g.constant(Tensor::column(self.targets.clone()));
        let r = g.sub(a, t)?;
        let sw = g.constant(Tensor::column(self.weights.iter().map(|w| w.sqrt()).collect()));
        let rw = g.mul(r, sw)?;
        let sq = g.mul(rw, rw)?;
        Ok(g.sum(sq))
    }
}

/// Walks every region cell and emits one term per (region, cell).
///
/// `target(peaks, x)` receives the indices of the regions whose peaks act on
/// `x` (only `i` itself for exclusive cells) and returns the target value.
fn assemble_terms(
    grid: &GridSpec,
    regions: &[CorrelationRegion],
    clamp_negative: bool,
    mut target: impl FnMut(&[usize], usize) -> f64,
) -> KnowledgeTerms {
    let cover = coverage(grid, regions);
    let mut rows = Vec::new();
    let mut weights = Vec::new();
    let mut targets = Vec::new();
    let own = |i: usize| vec![i];
    for (i, region) in regions.iter().enumerate() {
        let w = 1.0 / region.normalizer() as f64;
        let center = grid.index(region.center);
        for &x in &region.cells {
            let acting = if region.is_exclusive(x) { own(i) } else { cover[x].clone() };
            if acting.len() == 1 && x == center {
                continue;
            }
            let mut row: Vec<(usize, f64)> = Vec::with_capacity(acting.len() + 1);
            let mut push = |idx: usize, c: f64| match row.iter_mut().find(|(j, _)| *j == idx) {
                Some(e) => e.1 += c,
                None => row.push((idx, c)),
            };
            for &j in &acting {
                push(grid.index(regions[j].center), 1.0);
            }
            push(x, -(acting.len() as f64));
            row.retain(|&(_, c)| c != 0.0);
            targets.push(target(&acting, x));
            rows.push(row);
            weights.push(w);
        }
    }
    KnowledgeTerms { rows: Arc::new(SparseRows { rows }), weights, targets, clamp_negative }
}

/// Terms of the supervised knowledge loss; regions come from the true
/// transmitters and targets from the ground-truth map.
pub fn supervised_terms(
    truth: &SpectrumMap,
    regions: &[CorrelationRegion],
    form: KnowledgeForm,
) -> KnowledgeTerms {
    let grid = truth.grid;
    let v = &truth.values_dbm;
    let clamp = form == KnowledgeForm::Direction;
    assemble_terms(&grid, regions, clamp, |acting, x| {
        let delta: f64 = acting.iter().map(|&j| v[grid.index(regions[j].center)] - v[x]).sum();
        if clamp { delta.min(0.0) } else { delta }
    })
}

/// Terms of the unsupervised knowledge loss; targets are shadow-free path
/// losses from each acting peak.
pub fn unsupervised_terms(
    grid: &GridSpec,
    regions: &[CorrelationRegion],
    params: &PropagationParams,
) -> Result<KnowledgeTerms> {
    params.validate()?;
    Ok(assemble_terms(grid, regions, false, |acting, x| {
        let cell = grid.cell(x);
        acting
            .iter()
            .map(|&j| {
                let c = regions[j].center;
                if c == cell { 0.0 } else { params.path_loss_db(grid.distance(c, cell)).unwrap_or(0.0) }
            })
            .sum()
    }))
}

pub fn mse(truth: &SpectrumMap, recon: &SpectrumMap) -> Result<f64> {
    truth.same_shape(recon)?;
    let n = truth.values_dbm.len() as f64;
    Ok(truth.values_dbm.iter().zip(&recon.values_dbm).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n)
}

pub fn knowledge_loss_supervised(
    truth: &SpectrumMap,
    recon: &SpectrumMap,
    regions: &[CorrelationRegion],
    form: KnowledgeForm,
) -> Result<f64> {
    truth.same_shape(recon)?;
    Ok(supervised_terms(truth, regions, form).evaluate(&recon.values_dbm))
}

pub fn kmse(
    truth: &SpectrumMap,
    recon: &SpectrumMap,
    regions: &[CorrelationRegion],
    form: KnowledgeForm,
) -> Result<f64> {
    Ok(mse(truth, recon)? + knowledge_loss_supervised(truth, recon, regions, form)?)
}

pub fn rkmse(
    truth: &SpectrumMap,
    recon: &SpectrumMap,
    regions: &[CorrelationRegion],
    form: KnowledgeForm,
) -> Result<f64> {
    Ok(kmse(truth, recon, regions, form)?.sqrt())
}

fn data_weights(mask: &SampleMask, kappa: f64) -> Vec<f64> {
    mask.measured.iter().map(|&m| if m { 1.0 } else { kappa }).collect()
}

/// `(1/N)[Σ_measured e² + κ Σ_unmeasured e²]`.
pub fn data_loss(truth: &SpectrumMap, recon: &SpectrumMap, mask: &SampleMask, kappa: f64) -> Result<f64> {
    truth.same_shape(recon)?;
    if mask.grid.blocks != truth.grid.blocks {
        return Err(Error::validation("mask shape does not match map"));
    }
    let n = truth.values_dbm.len() as f64;
    let w = data_weights(mask, kappa);
    Ok(truth
        .values_dbm
        .iter()
        .zip(&recon.values_dbm)
        .zip(&w)
        .map(|((a, b), w)| w * (a - b).powi(2))
        .sum::<f64>()
        / n)
}

/// Graph form of [`data_loss`]; `recon` holds the flattened map.
pub fn data_loss_var(g: &mut Graph, recon: Var, truth: &[f64], mask: &SampleMask, kappa: f64) -> Result<Var> {
    let n = truth.len();
    if g.value(recon).len() != n || mask.measured.len() != n {
        return Err(Error::validation("data loss operands differ in length"));
    }
    let flat = g.reshape(recon, vec![n, 1])?;
    let t = g.constant(Tensor::column(truth.to_vec()));
    let e = g.sub(flat, t)?;
    let sw = g.constant(Tensor::column(data_weights(mask, kappa).iter().map(|w| w.sqrt()).collect()));
    let ew = g.mul(e, sw)?;
    Ok(g.mean_sq(ew))
}

/// Outcome of the unsupervised knowledge loss.
#[derive(Debug, Clone, PartialEq)]
pub struct UnsupervisedLoss {
    pub value: f64,
    /// No peak qualified, so the loss is zero by definition.
    pub no_peaks: bool,
}

pub fn knowledge_loss_unsupervised(
    recon: &SpectrumMap,
    est: &EstimatedTransmitterSet,
    regions: &[CorrelationRegion],
    params: &PropagationParams,
) -> Result<UnsupervisedLoss> {
    if est.peaks.is_empty() {
        return Ok(UnsupervisedLoss { value: 0.0, no_peaks: true });
    }
    let terms = unsupervised_terms(&recon.grid, regions, params)?;
    Ok(UnsupervisedLoss { value: terms.evaluate(&recon.values_dbm), no_peaks: false })
}

/// Settings shared by evaluation and online tuning.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    pub region_radius: usize,
    pub varphi: usize,
    pub zeta_db: f64,
    pub knowledge_form: KnowledgeForm,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self { region_radius: DEFAULT_REGION_RADIUS, varphi: 2, zeta_db: 3.0, knowledge_form: KnowledgeForm::Direction }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mse: f64,
    pub kmse: f64,
    pub rkmse: f64,
    pub knowledge_supervised: f64,
    pub knowledge_unsupervised: f64,
    pub n_estimated_tx: usize,
}

/// Full report for one reconstruction. Supervised terms use the true
/// transmitters; the unsupervised term uses peaks found in `recon`.
pub fn evaluate(
    truth: &SpectrumMap,
    recon: &SpectrumMap,
    txs: &[Transmitter],
    params: &PropagationParams,
    cfg: &MetricConfig,
) -> Result<MetricReport> {
    let centers: Vec<_> = txs.iter().map(|t| t.cell).collect();
    let regions = build_regions(&truth.grid, &centers, cfg.region_radius)?;
    let mse = mse(truth, recon)?;
    let ks = knowledge_loss_supervised(truth, recon, &regions, cfg.knowledge_form)?;
    let est = estimate_transmitters(recon, cfg.varphi, cfg.zeta_db, params)?;
    let ku = if est.peaks.is_empty() {
        0.0
    } else {
        let est_regions = build_regions(&recon.grid, &est.cells(), cfg.region_radius)?;
        knowledge_loss_unsupervised(recon, &est, &est_regions, params)?.value
    };
    Ok(MetricReport {
        mse,
        kmse: mse + ks,
        rkmse: (mse + ks).sqrt(),
        knowledge_supervised: ks,
        knowledge_unsupervised: ku,
        n_estimated_tx: est.peaks.len(),
    })
}
