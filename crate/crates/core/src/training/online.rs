use serde::{Deserialize, Serialize};

use super::{keep_prefixes, Grads, OnlineOptimizer, TrainConfig, ONLINE_PREFIXES};
use crate::autodiff::{Adam, Graph, ParamStore, StepOutcome, Var};
use crate::channel::{transmit_indices, ChannelConfig};
use crate::codec::{argmax_rows, lookup, Codec};
use crate::error::Result;
use crate::metrics::{build_regions, estimate_transmitters, unsupervised_terms};
use crate::radiomap::{Record, SpectrumMap};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnlineStep {
    pub step: usize,
    /// Loss before the update; 0 when skipped.
    pub loss: f64,
    pub n_peaks: usize,
    pub skipped: bool,
    pub index_errors: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OnlineReport {
    pub steps: Vec<OnlineStep>,
    /// Steps without any estimated transmitter.
    pub skipped: usize,
}

struct OnlinePass {
    loss: Option<Var>,
    n_peaks: usize,
    index_errors: usize,
}

/// Receiver-side pipeline in a graph: predictor logits → argmax indices →
/// link → decoder. The decoder input takes its value from the received
/// codewords and its gradient through `softmax(logits) · codebook`.
fn online_pass(
    g: &mut Graph,
    codec: &Codec,
    rec: &Record,
    cfg: &TrainConfig,
    channel: &ChannelConfig,
) -> Result<OnlinePass> {
    let logits = codec.predict_logits(g, &rec.masked, &rec.mask)?;
    let sent: Vec<Vec<usize>> = logits.iter().map(|&l| argmax_rows(g.value(l))).collect();
    let sizes = vec![codec.config.codebook_size; sent.len()];
    let tx = transmit_indices(&sent, &sizes, channel)?;
    let mut dhat = Vec::with_capacity(sent.len());
    for (s, (&l, idx)) in logits.iter().zip(&tx.received).enumerate() {
        let p = g.softmax(l, 1)?;
        let cb = codec.codebook(g, s);
        let soft = g.matmul(p, cb)?;
        let hard = g.constant(lookup(codec.codebook_tensor(s), idx));
        dhat.push(g.straight_through(soft, hard)?);
    }
    let recon = codec.decode(g, &dhat)?;
    let map = SpectrumMap::new(codec.grid(), g.value(recon).data().to_vec())?;
    let est = estimate_transmitters(&map, cfg.varphi, cfg.zeta_db, &rec.meta.params)?;
    if est.peaks.is_empty() {
        return Ok(OnlinePass { loss: None, n_peaks: 0, index_errors: tx.index_errors });
    }
    let regions = build_regions(&map.grid, &est.cells(), cfg.region_radius)?;
    let terms = unsupervised_terms(&map.grid, &regions, &rec.meta.params)?;
    let loss = terms.graph_loss(g, recon)?;
    Ok(OnlinePass { loss: Some(loss), n_peaks: est.peaks.len(), index_errors: tx.index_errors })
}

/// Unsupervised knowledge loss of the received reconstruction, or `None`
/// when no transmitter is estimated.
pub fn online_loss(codec: &Codec, rec: &Record, cfg: &TrainConfig, channel: &ChannelConfig) -> Result<Option<f64>> {
    let mut g = Graph::with_precision(cfg.precision());
    let pass = online_pass(&mut g, codec, rec, cfg, channel)?;
    Ok(pass.loss.map(|l| g.scalar(l)))
}

/// Label-free adaptation on a stream of received maps. Only the masked
/// map and its mask are read from each record, plus the propagation
/// constants used by the path-loss model.
pub fn tune_online(codec: &mut Codec, stream: &[Record], cfg: &TrainConfig) -> Result<OnlineReport> {
    cfg.validate()?;
    let mut report = OnlineReport::default();
    if stream.is_empty() {
        return Ok(report);
    }
    let mut adam = Adam::new(cfg.online_lr);
    for step in 0..cfg.online_steps {
        let rec = &stream[step % stream.len()];
        let ch = cfg.channel(0x0411, step as u64);
        let mut g = Graph::with_precision(cfg.precision());
        let pass = online_pass(&mut g, codec, rec, cfg, &ch)?;
        let Some(loss) = pass.loss else {
            report.skipped += 1;
            report.steps.push(OnlineStep { step, loss: 0.0, n_peaks: 0, skipped: true, index_errors: pass.index_errors });
            continue;
        };
        let value = g.scalar(loss);
        super::check_finite(value, "online loss", 0, step)?;
        g.backward(loss)?;
        let grads = keep_prefixes(g.param_grads()?, &codec.store, &ONLINE_PREFIXES);
        let outcome = match cfg.online_optimizer {
            OnlineOptimizer::Adam => adam.step(&mut codec.store, &grads),
            OnlineOptimizer::Sgd => sgd_step(&mut codec.store, &grads, cfg.online_lr),
        };
        if outcome == StepOutcome::SkippedNonFinite {
            log::warn!("online: non-finite gradient skipped at step {step}");
        }
        report.steps.push(OnlineStep {
            step,
            loss: value,
            n_peaks: pass.n_peaks,
            skipped: false,
            index_errors: pass.index_errors,
        });
    }
    Ok(report)
}

fn sgd_step(store: &mut ParamStore, grads: &Grads, lr: f64) -> StepOutcome {
    if grads.values().flatten().any(|g| !g.is_finite()) {
        return StepOutcome::SkippedNonFinite;
    }
    for (&id, g) in grads {
        store.get_mut(id).data_mut().iter_mut().zip(g).for_each(|(w, d)| *w -= lr * d);
    }
    StepOutcome::Applied
}

/// Plain receiver reconstruction: predict, transmit, decode.
pub fn reconstruct(codec: &Codec, rec: &Record, channel: &ChannelConfig) -> Result<(SpectrumMap, usize)> {
    let sent = codec.predict_indices(&rec.masked, &rec.mask)?;
    let sizes = vec![codec.config.codebook_size; sent.len()];
    let tx = transmit_indices(&sent, &sizes, channel)?;
    Ok((codec.decode_indices(&tx.received)?, tx.index_errors))
}
