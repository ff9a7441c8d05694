//! Experiment plumbing behind the `specmap` binary: one flat config file,
//! dataset generation, scoring of learned and baseline methods through the
//! same metric path, parameter sweeps and a markdown report.

mod eval;
mod report;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::channel::ChannelConfig;
use crate::codec::CodecConfig;
use crate::error::{Error, Result};
use crate::metrics::{KnowledgeForm, LossWeights, MetricConfig};
use crate::radiomap::{DatasetConfig, GridSpec, MaskMode, PropagationParams};
use crate::training::{OnlineOptimizer, TrainConfig};

pub use eval::{
    evaluate_codec, evaluate_idw, score_map, sweep, EvalRow, EvalSummary, Method, SweepAxis, SweepRow, SweepSpec,
};
pub use report::{read_sweep_csv, render_report, write_sweep_csv, SWEEP_COLUMNS};

/// Every tunable of a desk experiment under flat keys. Missing keys take
/// the defaults below; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    // dataset
    pub seed: u64,
    pub train_count: usize,
    pub test_count: usize,
    pub grid_blocks: [usize; 3],
    pub extent_m: [f64; 3],
    pub tx_min: usize,
    pub tx_max: usize,
    pub power_pool_dbm: Vec<f64>,
    pub freq_hz: f64,
    pub shadow_sigma_db: f64,
    pub noise_sigma: f64,
    pub tau: f64,
    pub mask_mode: MaskMode,
    pub ground_layers: usize,
    // codec
    pub scales: usize,
    pub patch: usize,
    pub n_win: usize,
    pub heads: usize,
    pub depth: usize,
    pub width: usize,
    pub codebook_size: usize,
    // training
    pub epochs: usize,
    pub stage2_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub kappa: f64,
    pub w_k: f64,
    pub w_c: f64,
    pub gamma: f64,
    pub train_snr_db: f64,
    pub online_steps: usize,
    pub online_lr: f64,
    pub online_optimizer: OnlineOptimizer,
    pub f32: bool,
    pub knowledge_form: KnowledgeForm,
    // metrics
    pub region_radius: usize,
    pub varphi: usize,
    pub zeta_db: f64,
    // link
    pub varpi: f64,
    pub upsilon: f64,
    pub eval_snr_db: f64,
    pub idw_power: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let ds = DatasetConfig::default();
        let cc = CodecConfig::default();
        let tc = TrainConfig::default();
        let ch = ChannelConfig::default();
        Self {
            seed: 0,
            train_count: 256,
            test_count: 64,
            grid_blocks: ds.grid.blocks,
            extent_m: ds.grid.extent_m,
            tx_min: ds.tx_count_range.0,
            tx_max: ds.tx_count_range.1,
            power_pool_dbm: ds.power_pool_dbm,
            freq_hz: ds.params.freq_hz,
            shadow_sigma_db: ds.params.shadow_sigma_db,
            noise_sigma: ds.params.noise_sigma,
            tau: ds.tau,
            mask_mode: ds.mask_mode,
            ground_layers: ds.ground_layers,
            scales: cc.scales,
            patch: cc.patch,
            n_win: cc.n_win,
            heads: cc.heads,
            depth: cc.depth,
            width: cc.width,
            codebook_size: cc.codebook_size,
            epochs: tc.epochs,
            stage2_epochs: tc.epochs,
            batch_size: tc.batch_size,
            lr: tc.lr,
            kappa: tc.weights.kappa,
            w_k: tc.weights.w_k,
            w_c: tc.weights.w_c,
            gamma: tc.weights.gamma,
            train_snr_db: tc.snr_db,
            online_steps: tc.online_steps,
            online_lr: tc.online_lr,
            online_optimizer: tc.online_optimizer,
            f32: tc.f32,
            knowledge_form: tc.knowledge_form,
            region_radius: tc.region_radius,
            varphi: tc.varphi,
            zeta_db: tc.zeta_db,
            varpi: ch.varpi,
            upsilon: ch.upsilon,
            eval_snr_db: ch.snr_db,
            idw_power: crate::baselines::DEFAULT_IDW_POWER,
        }
    }
}

impl ExperimentConfig {
    /// Reads a TOML file; an absent path yields the defaults.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = toml::from_str(&text).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.grid()?;
        self.propagation().validate()?;
        self.codec().validate()?;
        self.train().validate()?;
        if self.train_count == 0 || self.test_count == 0 {
            return Err(Error::validation("train_count and test_count must be >= 1"));
        }
        if !(self.idw_power > 0.0) {
            return Err(Error::validation("idw_power must be positive"));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<GridSpec> {
        GridSpec::new(self.extent_m, self.grid_blocks)
    }

    pub fn propagation(&self) -> PropagationParams {
        PropagationParams {
            freq_hz: self.freq_hz,
            shadow_sigma_db: self.shadow_sigma_db,
            noise_sigma: self.noise_sigma,
            ..PropagationParams::default()
        }
    }

    /// Dataset settings for the `train` or `test` split; the splits draw
    /// from different seed streams.
    pub fn dataset(&self, test: bool) -> Result<DatasetConfig> {
        Ok(DatasetConfig {
            count: if test { self.test_count } else { self.train_count },
            grid: self.grid()?,
            tx_count_range: (self.tx_min, self.tx_max),
            power_pool_dbm: self.power_pool_dbm.clone(),
            params: self.propagation(),
            tau: self.tau,
            mask_mode: self.mask_mode,
            ground_layers: self.ground_layers,
            seed: crate::rng::derive_seed(self.seed, test as u64),
        })
    }

    pub fn codec(&self) -> CodecConfig {
        CodecConfig {
            scales: self.scales,
            patch: self.patch,
            n_win: self.n_win,
            heads: self.heads,
            depth: self.depth,
            width: self.width,
            codebook_size: self.codebook_size,
            ..CodecConfig::default()
        }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            weights: LossWeights { kappa: self.kappa, w_k: self.w_k, w_c: self.w_c, gamma: self.gamma },
            snr_db: self.train_snr_db,
            seed: self.seed,
            online_steps: self.online_steps,
            online_lr: self.online_lr,
            online_optimizer: self.online_optimizer,
            f32: self.f32,
            region_radius: self.region_radius,
            knowledge_form: self.knowledge_form,
            varphi: self.varphi,
            zeta_db: self.zeta_db,
            varpi: self.varpi,
            upsilon: self.upsilon,
        }
    }

    pub fn stage2(&self) -> TrainConfig {
        TrainConfig { epochs: self.stage2_epochs, seed: self.seed ^ 0x5eed, ..self.train() }
    }

    pub fn metrics(&self) -> MetricConfig {
        self.train().metric_config()
    }

    /// Evaluation link at `snr_db`, keyed by `(stream, item)`.
    pub fn eval_channel(&self, snr_db: f64, stream: u64, item: u64) -> ChannelConfig {
        let tc = TrainConfig { snr_db, ..self.train() };
        tc.channel(crate::rng::derive_seed(0xe7a1, stream), item)
    }
}

#[cfg(test)]
mod tests;
