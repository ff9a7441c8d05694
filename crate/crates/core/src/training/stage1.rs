use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{average_grads, check_finite, epoch_order, keep_prefixes, TrainConfig, STAGE1_PREFIXES};
use crate::autodiff::{Adam, Graph, StepOutcome, Tensor, Var};
use crate::channel::{transmit_indices, ChannelConfig};
use crate::codec::{lookup, Anchors, Codec};
use crate::error::Result;
use crate::metrics::{build_regions, data_loss_var, supervised_terms, KnowledgeTerms};
use crate::radiomap::Record;
use crate::rng;

/// Quantization outcome of one forward pass, reusable to evaluate the same
/// loss surface at perturbed parameters.
#[derive(Debug, Clone)]
pub struct FrozenQuant {
    pub indices: Vec<Vec<usize>>,
    pub received: Vec<Vec<usize>>,
    pub anchors: Vec<Anchors>,
    /// `d̂ - d` per scale; added to `d` as a constant (straight-through).
    pub offsets: Vec<Tensor>,
}

pub struct Stage1Pass {
    pub total: Var,
    pub recon: Var,
    pub data: f64,
    pub knowledge: f64,
    pub commit: f64,
    /// Mean Euclidean distance between tokens and their codewords.
    pub quant_dist: f64,
    pub index_errors: usize,
    pub frozen: FrozenQuant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage1Epoch {
    pub epoch: usize,
    pub loss: f64,
    pub data: f64,
    pub knowledge: f64,
    pub commit: f64,
    pub quant_dist: f64,
    pub index_error_rate: f64,
    pub skipped_steps: u64,
}

/// Supervised knowledge terms of a training record.
pub fn record_terms(rec: &Record, cfg: &TrainConfig) -> Result<KnowledgeTerms> {
    let centers: Vec<_> = rec.meta.transmitters.iter().map(|t| t.cell).collect();
    let regions = build_regions(&rec.map.grid, &centers, cfg.region_radius)?;
    Ok(supervised_terms(&rec.map, &regions, cfg.knowledge_form))
}

/// Builds `L^Off = L_D + w_K L_K^S + w_C L_C` for one complete map.
///
/// Indices are corrupted by `channel` (if any) in the forward pass only;
/// the decoder input is `d + (d̂ - d)` with the bracket held constant, so
/// gradients reach the encoder unchanged.
pub fn stage1_loss(
    g: &mut Graph,
    codec: &Codec,
    rec: &Record,
    terms: &KnowledgeTerms,
    cfg: &TrainConfig,
    channel: Option<&ChannelConfig>,
    frozen: Option<&FrozenQuant>,
) -> Result<Stage1Pass> {
    let w = cfg.weights;
    let d = codec.encode(g, &rec.map)?;
    let mut quant = Vec::with_capacity(d.len());
    for (s, &ds) in d.iter().enumerate() {
        let pin = frozen.map(|f| (f.indices[s].as_slice(), &f.anchors[s]));
        quant.push(codec.quantize(g, s, ds, w.gamma, pin)?);
    }
    let indices: Vec<Vec<usize>> = quant.iter().map(|q| q.indices.clone()).collect();
    let (received, offsets) = match frozen {
        Some(f) => (f.received.clone(), f.offsets.clone()),
        None => {
            let received = match channel {
                Some(ch) => {
                    let sizes = vec![codec.config.codebook_size; indices.len()];
                    transmit_indices(&indices, &sizes, ch)?.received
                }
                None => indices.clone(),
            };
            let offsets = received
                .iter()
                .enumerate()
                .map(|(s, idx)| {
                    let hat = lookup(codec.codebook_tensor(s), idx);
                    let dv = g.value(d[s]);
                    Tensor::new(dv.shape().to_vec(), hat.data().iter().zip(dv.data()).map(|(a, b)| a - b).collect())
                })
                .collect();
            (received, offsets)
        }
    };
    let index_errors = indices.iter().flatten().zip(received.iter().flatten()).filter(|(a, b)| a != b).count();
    let mut dhat = Vec::with_capacity(d.len());
    for (&ds, off) in d.iter().zip(&offsets) {
        let c = g.constant(off.clone());
        dhat.push(g.add(ds, c)?);
    }
    let recon = codec.decode(g, &dhat)?;
    let data = data_loss_var(g, recon, &rec.map.values_dbm, &rec.mask, w.kappa)?;
    let know = terms.graph_loss(g, recon)?;
    let mut commit = quant[0].loss;
    for q in &quant[1..] {
        commit = g.add(commit, q.loss)?;
    }
    let wk = g.scale(know, w.w_k);
    let wc = g.scale(commit, w.w_c);
    let total = g.add(data, wk)?;
    let total = g.add(total, wc)?;

    let mut dist = 0.0;
    let mut tokens = 0;
    for q in &quant {
        let (n, _) = q.anchors.d.dims2().expect("2-D");
        for i in 0..n {
            dist += q.anchors.d.row(i).iter().zip(q.anchors.tilde.row(i)).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        }
        tokens += n;
    }
    let anchors = quant.iter().map(|q| q.anchors.clone()).collect();
    Ok(Stage1Pass {
        total,
        recon,
        data: g.scalar(data),
        knowledge: g.scalar(know),
        commit: g.scalar(commit),
        quant_dist: dist / tokens.max(1) as f64,
        index_errors,
        frozen: FrozenQuant { indices, received, anchors, offsets },
    })
}

/// Seeds every codebook with encoder outputs drawn from `records` plus a
/// little jitter, so that all codewords start inside the token cloud.
pub fn init_codebooks(codec: &mut Codec, records: &[Record], seed: u64) -> Result<()> {
    let mut r = rng::stream(seed, 0xCB);
    let scales = codec.geometry.scales();
    let mut pools: Vec<Vec<Vec<f64>>> = vec![Vec::new(); scales];
    for rec in records {
        let mut g = Graph::new();
        let d = codec.encode(&mut g, &rec.map)?;
        for (s, v) in d.iter().enumerate() {
            let t = g.value(*v);
            let (n, _) = t.dims2().expect("2-D");
            pools[s].extend((0..n).map(|i| t.row(i).to_vec()));
        }
    }
    let l = codec.config.codebook_size;
    for (s, pool) in pools.iter().enumerate() {
        if pool.is_empty() {
            continue;
        }
        let picks: Vec<usize> = if pool.len() >= l {
            index::sample(&mut r, pool.len(), l).into_vec()
        } else {
            (0..l).map(|_| r.random_range(0..pool.len())).collect()
        };
        let id = codec.store.id(&format!("cb.{s}")).expect("codebook");
        let cb = codec.store.get_mut(id);
        let c = cb.shape()[1];
        for (k, &p) in picks.iter().enumerate() {
            for j in 0..c {
                cb.data_mut()[k * c + j] = pool[p][j] + r.random_range(-0.01..0.01);
            }
        }
    }
    Ok(())
}

/// Offline training of encoder, decoder and codebooks on complete maps.
pub fn train_stage1(codec: &mut Codec, records: &[Record], cfg: &TrainConfig) -> Result<Vec<Stage1Epoch>> {
    cfg.validate()?;
    let terms: Vec<KnowledgeTerms> = records.iter().map(|r| record_terms(r, cfg)).collect::<Result<_>>()?;
    let mut adam = Adam::new(cfg.lr);
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let order = epoch_order(records.len(), cfg.seed, epoch);
        let mut sums = [0.0; 5];
        let mut errors = 0usize;
        let mut sent = 0usize;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let parts = batch
                .par_iter()
                .map(|&i| {
                    let mut g = Graph::with_precision(cfg.precision());
                    let ch = cfg.channel(epoch as u64, i as u64);
                    let pass = stage1_loss(&mut g, codec, &records[i], &terms[i], cfg, Some(&ch), None)?;
                    let total = g.scalar(pass.total);
                    g.backward(pass.total)?;
                    let grads = keep_prefixes(g.param_grads()?, &codec.store, &STAGE1_PREFIXES);
                    let tokens: usize = pass.frozen.indices.iter().map(Vec::len).sum();
                    let stats = [total, pass.data, pass.knowledge, pass.commit, pass.quant_dist];
                    Ok((grads, stats, pass.index_errors, tokens))
                })
                .collect::<Result<Vec<_>>>()?;
            let mut grads = Vec::with_capacity(parts.len());
            for (gr, st, e, t) in parts {
                check_finite(st[0], "stage-1 loss", epoch, b)?;
                for k in 0..5 {
                    sums[k] += st[k];
                }
                errors += e;
                sent += t;
                grads.push(gr);
            }
            if adam.step(&mut codec.store, &average_grads(grads)) == StepOutcome::SkippedNonFinite {
                log::warn!("stage 1: non-finite gradient skipped at epoch {epoch}, batch {b}");
            }
        }
        let n = records.len().max(1) as f64;
        log.push(Stage1Epoch {
            epoch: epoch + 1,
            loss: sums[0] / n,
            data: sums[1] / n,
            knowledge: sums[2] / n,
            commit: sums[3] / n,
            quant_dist: sums[4] / n,
            index_error_rate: errors as f64 / sent.max(1) as f64,
            skipped_steps: adam.skipped(),
        });
    }
    Ok(log)
}

/// Central-difference check of the full `L^Off` gradient w.r.t. every
/// encoder, decoder and codebook value. The quantization outcome of a first
/// pass (indices, anchors and the straight-through offsets) is pinned, so
/// the perturbed losses lie on the same smooth surrogate the analytic
/// gradient differentiates. Returns the worst norm-wise relative error.
pub fn stage1_gradcheck(codec: &Codec, rec: &Record, cfg: &TrainConfig, channel: Option<&ChannelConfig>) -> Result<f64> {
    let terms = record_terms(rec, cfg)?;
    let mut g = Graph::new();
    let frozen = stage1_loss(&mut g, codec, rec, &terms, cfg, channel, None)?.frozen;
    let mut store = codec.store.clone();
    let ids: Vec<_> = store.ids_with_prefix(&STAGE1_PREFIXES).collect();
    let mut probe = codec.clone();
    let err = crate::autodiff::check::gradcheck(&mut store, &ids, 1e-6, |g, s| {
        // The closure only sees the perturbed store; swap it in for the pass.
        probe.store = s.clone();
        stage1_loss(g, &probe, rec, &terms, cfg, None, Some(&frozen)).expect("pinned pass").total
    });
    Ok(err)
}
