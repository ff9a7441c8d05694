//! Offline codec training, predictor distillation and online knowledge
//! tuning.

mod online;
mod stage1;
mod stage2;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, Precision};
use crate::channel::ChannelConfig;
use crate::error::{Error, Result};
use crate::metrics::{KnowledgeForm, LossWeights, MetricConfig};
use crate::rng;

pub use online::{online_loss, reconstruct, tune_online, OnlineReport, OnlineStep};
pub use stage1::{init_codebooks, record_terms, stage1_gradcheck, stage1_loss, train_stage1, FrozenQuant, Stage1Epoch, Stage1Pass};
pub use stage2::{index_accuracy, stage2_loss, train_stage2, Stage2Epoch};

/// Parameter families touched by each phase.
pub const STAGE1_PREFIXES: [&str; 3] = ["enc.", "dec.", "cb."];
pub const STAGE2_PREFIXES: [&str; 1] = ["pred."];
pub const ONLINE_PREFIXES: [&str; 3] = ["pred.", "dec.", "cb."];

/// Update rule for online tuning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OnlineOptimizer {
    #[default]
    Adam,
    /// Plain gradient descent; steps scale with the gradient, so weakly
    /// involved parameters barely move.
    Sgd,
}

impl std::str::FromStr for OnlineOptimizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(Self::Adam),
            "sgd" => Ok(Self::Sgd),
            other => Err(Error::validation(format!("unknown online optimizer {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weights: LossWeights,
    /// Receiver SNR of the training link; `inf` disables corruption.
    pub snr_db: f64,
    pub seed: u64,
    pub online_steps: usize,
    pub online_lr: f64,
    pub online_optimizer: OnlineOptimizer,
    /// Round every op to single precision.
    pub f32: bool,
    pub region_radius: usize,
    pub knowledge_form: KnowledgeForm,
    pub varphi: usize,
    pub zeta_db: f64,
    /// Channel constants; distance is redrawn per transmission.
    pub varpi: f64,
    pub upsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let m = MetricConfig::default();
        let c = ChannelConfig::default();
        Self {
            epochs: 30,
            batch_size: 8,
            lr: 1e-3,
            weights: LossWeights::default(),
            snr_db: 12.0,
            seed: 0,
            online_steps: 50,
            online_lr: 1e-4,
            online_optimizer: OnlineOptimizer::Adam,
            f32: false,
            region_radius: m.region_radius,
            knowledge_form: m.knowledge_form,
            varphi: m.varphi,
            zeta_db: m.zeta_db,
            varpi: c.varpi,
            upsilon: c.upsilon,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::validation("epochs and batch size must be >= 1"));
        }
        if !(self.lr >= 0.0 && self.online_lr >= 0.0) {
            return Err(Error::validation("learning rates must be non-negative"));
        }
        if self.snr_db.is_nan() {
            return Err(Error::validation("training SNR is NaN"));
        }
        Ok(())
    }

    pub fn precision(&self) -> Precision {
        if self.f32 { Precision::F32 } else { Precision::F64 }
    }

    pub fn metric_config(&self) -> MetricConfig {
        MetricConfig {
            region_radius: self.region_radius,
            varphi: self.varphi,
            zeta_db: self.zeta_db,
            knowledge_form: self.knowledge_form,
        }
    }

    /// Link realization for one transmission, keyed by `(stream, item)`.
    pub fn channel(&self, stream: u64, item: u64) -> ChannelConfig {
        let seed = rng::derive_seed(rng::derive_seed(self.seed, stream), item);
        ChannelConfig {
            varpi: self.varpi,
            upsilon: self.upsilon,
            snr_db: self.snr_db,
            rng_seed: seed,
            ..ChannelConfig::default()
        }
        .with_random_distance(rng::derive_seed(seed, 1))
    }
}

pub(crate) type Grads = BTreeMap<ParamId, Vec<f64>>;

/// Sums per-sample gradients in order and scales by `1/n`.
pub(crate) fn average_grads(parts: Vec<Grads>) -> Grads {
    let n = parts.len().max(1) as f64;
    let mut out: Grads = BTreeMap::new();
    for part in parts {
        for (id, g) in part {
            match out.get_mut(&id) {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                None => {
                    out.insert(id, g);
                }
            }
        }
    }
    for g in out.values_mut() {
        g.iter_mut().for_each(|x| *x /= n);
    }
    out
}

pub(crate) fn keep_prefixes(grads: Grads, store: &crate::autodiff::ParamStore, prefixes: &[&str]) -> Grads {
    grads.into_iter().filter(|(id, _)| prefixes.iter().any(|p| store.name(*id).starts_with(p))).collect()
}

pub(crate) fn check_finite(v: f64, what: &str, epoch: usize, batch: usize) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Numerical(format!("{what} is {v} at epoch {epoch}, batch {batch}")))
    }
}

/// Shuffled visiting order for one epoch.
pub(crate) fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, 0x5EED_0000 + epoch as u64));
    order
}

/// Writes rows of a serializable trace as CSV with a header.
pub fn write_trace<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
