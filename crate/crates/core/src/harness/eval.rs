use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ExperimentConfig;
use crate::baselines::idw_complete;
use crate::channel::{transmit_samples_fixed16, FIXED16_STEP_DB};
use crate::codec::Codec;
use crate::error::{Error, Result};
use crate::metrics::{self, MetricReport};
use crate::radiomap::{Record, SpectrumMap, EMPTY_DBM};
use crate::rng;
use crate::training::reconstruct;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Predictor → semantic link → decoder.
    Codec,
    /// Raw samples over the same link, completed by IDW.
    Idw,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Codec => "codec",
            Method::Idw => "idw",
        })
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "codec" => Ok(Self::Codec),
            "idw" => Ok(Self::Idw),
            other => Err(Error::validation(format!("unknown method {other:?}"))),
        }
    }
}

/// Scores of one map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub map_id: String,
    pub mse: f64,
    pub kmse: f64,
    pub rkmse: f64,
    pub knowledge_supervised: f64,
    pub knowledge_unsupervised: f64,
    pub n_estimated_tx: usize,
    /// Codebook indices (codec) or 16-bit samples (IDW) altered by the link.
    pub link_errors: usize,
    pub link_units: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub method: Method,
    pub snr_db: f64,
    pub n_maps: usize,
    pub mse: f64,
    pub kmse: f64,
    pub rkmse: f64,
    pub link_error_rate: f64,
    pub rows: Vec<EvalRow>,
}

impl EvalSummary {
    fn from_rows(method: Method, snr_db: f64, rows: Vec<EvalRow>) -> Self {
        let n = rows.len().max(1) as f64;
        let mean = |f: fn(&EvalRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
        let units: usize = rows.iter().map(|r| r.link_units).sum();
        let errors: usize = rows.iter().map(|r| r.link_errors).sum();
        Self {
            method,
            snr_db,
            n_maps: rows.len(),
            mse: mean(|r| r.mse),
            kmse: mean(|r| r.kmse),
            rkmse: mean(|r| r.rkmse),
            link_error_rate: errors as f64 / units.max(1) as f64,
            rows,
        }
    }
}

/// The one scoring path shared by every method: ground-truth regions from
/// the record's transmitters, estimated peaks from the reconstruction.
pub fn score_map(rec: &Record, recon: &SpectrumMap, cfg: &ExperimentConfig) -> Result<MetricReport> {
    if let Some(bad) = recon.values_dbm.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!("{}: non-finite reconstruction at voxel {bad}", rec.meta.id)));
    }
    metrics::evaluate(&rec.map, recon, &rec.meta.transmitters, &rec.meta.params, &cfg.metrics())
}

fn row(rec: &Record, report: MetricReport, link_errors: usize, link_units: usize) -> EvalRow {
    EvalRow {
        map_id: rec.meta.id.clone(),
        mse: report.mse,
        kmse: report.kmse,
        rkmse: report.rkmse,
        knowledge_supervised: report.knowledge_supervised,
        knowledge_unsupervised: report.knowledge_unsupervised,
        n_estimated_tx: report.n_estimated_tx,
        link_errors,
        link_units,
    }
}

/// Scores the receiver pipeline on `records` at `snr_db`. Link noise for
/// map `i` is drawn from `(stream, i)`.
pub fn evaluate_codec(
    codec: &Codec,
    records: &[Record],
    cfg: &ExperimentConfig,
    snr_db: f64,
    stream: u64,
) -> Result<EvalSummary> {
    let units: usize = (0..codec.geometry.scales()).map(|s| codec.geometry.tokens(s)).sum();
    let rows = records
        .par_iter()
        .enumerate()
        .map(|(i, rec)| {
            let (recon, errors) = reconstruct(codec, rec, &cfg.eval_channel(snr_db, stream, i as u64))?;
            Ok(row(rec, score_map(rec, &recon, cfg)?, errors, units))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalSummary::from_rows(Method::Codec, snr_db, rows))
}

/// Sends the measured samples as 16-bit fixed-point over the same link and
/// completes the received map with IDW.
pub fn evaluate_idw(records: &[Record], cfg: &ExperimentConfig, snr_db: f64, stream: u64) -> Result<EvalSummary> {
    let rows = records
        .par_iter()
        .enumerate()
        .map(|(i, rec)| {
            let slots: Vec<usize> = (0..rec.mask.measured.len()).filter(|&v| rec.mask.measured[v]).collect();
            let sent: Vec<f64> = slots.iter().map(|&v| rec.masked.values_dbm[v]).collect();
            let (received, _) = transmit_samples_fixed16(&sent, &cfg.eval_channel(snr_db, stream, i as u64))?;
            let mut values = vec![EMPTY_DBM; rec.masked.values_dbm.len()];
            let mut errors = 0;
            for ((&v, &s), &r) in slots.iter().zip(&sent).zip(&received) {
                values[v] = r;
                errors += ((s / FIXED16_STEP_DB).round() != (r / FIXED16_STEP_DB).round()) as usize;
            }
            let rx = SpectrumMap::new(rec.masked.grid, values)?;
            let recon = idw_complete(&rx, &rec.mask, cfg.idw_power)?;
            Ok(row(rec, score_map(rec, &recon, cfg)?, errors, slots.len()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalSummary::from_rows(Method::Idw, snr_db, rows))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Snr,
    Tau,
    NWin,
    NTx,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            Self::Snr => "snr",
            Self::Tau => "tau",
            Self::NWin => "n_win",
            Self::NTx => "n_tx",
        }
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "snr" => Ok(Self::Snr),
            "tau" => Ok(Self::Tau),
            "n_win" => Ok(Self::NWin),
            "n_tx" => Ok(Self::NTx),
            other => Err(Error::validation(format!("unknown sweep axis {other:?} (snr, tau, n_win, n_tx)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    pub repeats: usize,
    pub methods: Vec<Method>,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() || self.repeats == 0 || self.methods.is_empty() {
            return Err(Error::validation("sweep needs axis values, methods and repeats >= 1"));
        }
        let integral = matches!(self.axis, SweepAxis::NWin | SweepAxis::NTx);
        if self.values.iter().any(|v| !v.is_finite() || (integral && (v.fract() != 0.0 || *v < 1.0))) {
            return Err(Error::validation(format!("bad values for axis {}", self.axis.name())));
        }
        Ok(())
    }
}

/// One CSV line of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: String,
    pub value: f64,
    pub repeat: usize,
    pub method: Method,
    pub n_maps: usize,
    pub mse: f64,
    pub kmse: f64,
    pub rkmse: f64,
    pub link_error_rate: f64,
}

/// Evaluates every `(value, repeat, method)` point. Points run in parallel;
/// rows come back in axis order. Each repeat re-seeds the link.
pub fn sweep(codec: &Codec, test: &[Record], cfg: &ExperimentConfig, spec: &SweepSpec) -> Result<Vec<SweepRow>> {
    spec.validate()?;
    let points: Vec<(usize, usize, Method)> = (0..spec.values.len())
        .flat_map(|v| (0..spec.repeats).flat_map(move |r| spec.methods.iter().map(move |&m| (v, r, m))))
        .collect();
    points
        .par_iter()
        .map(|&(vi, repeat, method)| {
            let value = spec.values[vi];
            let stream = rng::derive_seed(repeat as u64, vi as u64);
            let mut snr = cfg.eval_snr_db;
            let mut local = codec.clone();
            let records: Vec<Record> = match spec.axis {
                SweepAxis::Snr => {
                    snr = value;
                    test.to_vec()
                }
                SweepAxis::Tau => test
                    .iter()
                    .map(|r| r.remasked(value, r.meta.mask_mode, rng::derive_seed(r.meta.mask_seed, value.to_bits())))
                    .collect::<Result<_>>()?,
                SweepAxis::NWin => {
                    local.config.n_win = value as usize;
                    local.config.validate()?;
                    test.to_vec()
                }
                SweepAxis::NTx => {
                    // Fresh maps from the config's test stream with exactly n transmitters.
                    let n = value as usize;
                    let ds = crate::radiomap::DatasetConfig {
                        count: test.len(),
                        tx_count_range: (n, n),
                        ..cfg.dataset(true)?
                    };
                    if ds.grid != local.grid() {
                        return Err(Error::validation("n_tx sweep: config grid differs from the checkpoint grid"));
                    }
                    (0..ds.count).map(|i| Record::generate(&ds, i)).collect::<Result<_>>()?
                }
            };
            let s = match method {
                Method::Codec => evaluate_codec(&local, &records, cfg, snr, stream)?,
                Method::Idw => evaluate_idw(&records, cfg, snr, stream)?,
            };
            Ok(SweepRow {
                axis: spec.axis.name().into(),
                value,
                repeat,
                method,
                n_maps: s.n_maps,
                mse: s.mse,
                kmse: s.kmse,
                rkmse: s.rkmse,
                link_error_rate: s.link_error_rate,
            })
        })
        .collect()
}
