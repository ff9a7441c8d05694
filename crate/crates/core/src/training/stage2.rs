use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{average_grads, check_finite, epoch_order, keep_prefixes, TrainConfig, STAGE2_PREFIXES};
use crate::autodiff::{Adam, Graph, StepOutcome, Var};
use crate::codec::{argmax_rows, Codec};
use crate::error::Result;
use crate::radiomap::Record;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage2Epoch {
    pub epoch: usize,
    /// Summed cross-entropy per map, averaged over maps.
    pub loss: f64,
    /// Token-level argmax agreement with the teacher.
    pub accuracy: f64,
}

/// Cross-entropy of the predictor's logits on the masked map against the
/// teacher's indices, summed over tokens and scales. Returns the loss and
/// the number of correct argmax tokens.
pub fn stage2_loss(g: &mut Graph, codec: &Codec, rec: &Record, teacher: &[Vec<usize>]) -> Result<(Var, usize)> {
    let logits = codec.predict_logits(g, &rec.masked, &rec.mask)?;
    let mut total: Option<Var> = None;
    let mut correct = 0;
    for (l, t) in logits.iter().zip(teacher) {
        correct += argmax_rows(g.value(*l)).iter().zip(t).filter(|(a, b)| a == b).count();
        let ce = g.cross_entropy_logits(*l, t.as_slice().into())?;
        total = Some(match total {
            Some(acc) => g.add(acc, ce)?,
            None => ce,
        });
    }
    Ok((total.expect("at least one scale"), correct))
}

/// Distils the frozen encoder into the masked-map predictor. Only `pred.`
/// parameters change.
pub fn train_stage2(codec: &mut Codec, records: &[Record], cfg: &TrainConfig) -> Result<Vec<Stage2Epoch>> {
    cfg.validate()?;
    let teacher: Vec<Vec<Vec<usize>>> =
        records.par_iter().map(|r| codec.encode_indices(&r.map)).collect::<Result<_>>()?;
    let tokens: usize = teacher.first().map(|t| t.iter().map(Vec::len).sum()).unwrap_or(0);
    let mut adam = Adam::new(cfg.lr);
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let order = epoch_order(records.len(), cfg.seed ^ 0x2, epoch);
        let (mut loss, mut correct) = (0.0, 0usize);
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let parts = batch
                .par_iter()
                .map(|&i| {
                    let mut g = Graph::with_precision(cfg.precision());
                    let (l, c) = stage2_loss(&mut g, codec, &records[i], &teacher[i])?;
                    let v = g.scalar(l);
                    g.backward(l)?;
                    Ok((keep_prefixes(g.param_grads()?, &codec.store, &STAGE2_PREFIXES), v, c))
                })
                .collect::<Result<Vec<_>>>()?;
            let mut grads = Vec::with_capacity(parts.len());
            for (gr, v, c) in parts {
                check_finite(v, "stage-2 loss", epoch, b)?;
                loss += v;
                correct += c;
                grads.push(gr);
            }
            if adam.step(&mut codec.store, &average_grads(grads)) == StepOutcome::SkippedNonFinite {
                log::warn!("stage 2: non-finite gradient skipped at epoch {epoch}, batch {b}");
            }
        }
        let n = records.len().max(1);
        log.push(Stage2Epoch {
            epoch: epoch + 1,
            loss: loss / n as f64,
            accuracy: correct as f64 / (n * tokens).max(1) as f64,
        });
    }
    Ok(log)
}

/// Fraction of tokens where the predictor's argmax equals the encoder's
/// index.
pub fn index_accuracy(codec: &Codec, records: &[Record]) -> Result<f64> {
    let counts = records
        .par_iter()
        .map(|r| {
            let t = codec.encode_indices(&r.map)?;
            let p = codec.predict_indices(&r.masked, &r.mask)?;
            let hit = t.iter().flatten().zip(p.iter().flatten()).filter(|(a, b)| a == b).count();
            Ok((hit, t.iter().map(Vec::len).sum::<usize>()))
        })
        .collect::<Result<Vec<(usize, usize)>>>()?;
    let (hit, total) = counts.iter().fold((0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    Ok(hit as f64 / total.max(1) as f64)
}
