use std::path::Path;
use std::rc::Rc;

use serde::{Deserialize, Serialize};

use super::geometry::{neighborhoods, window_radius, Geometry};
use super::CodecConfig;
use crate::autodiff::{Graph, ParamStore, Tensor, Var};
use crate::error::{Error, Result};
use crate::radiomap::{GridSpec, SampleMask, SpectrumMap};
use crate::rng;

const LN_EPS: f64 = 1e-5;

/// Codec parameters plus the fixed token geometry of one grid.
///
/// Parameter families are prefixed `enc.` (full-map encoder), `dec.`,
/// `cb.` (codebooks) and `pred.` (masked-map predictor).
#[derive(Debug, Clone)]
pub struct Codec {
    pub config: CodecConfig,
    pub geometry: Geometry,
    pub store: ParamStore,
}

/// Values held constant inside the commitment loss.
#[derive(Debug, Clone, PartialEq)]
pub struct Anchors {
    pub d: Tensor,
    pub tilde: Tensor,
}

/// One scale after quantization.
#[derive(Debug, Clone)]
pub struct QuantizedScale {
    pub indices: Vec<usize>,
    /// Selected codebook rows; differentiable w.r.t. the codebook.
    pub tilde: Var,
    /// `‖tg[d] - d̃‖² + γ‖d - tg[d̃]‖²`, summed over channels, averaged over tokens.
    pub loss: Var,
    pub anchors: Anchors,
}

#[derive(Serialize, Deserialize)]
struct CodecManifest {
    config: CodecConfig,
    grid: GridSpec,
}

/// Nearest row of `codebook` for each row of `d`; ties go to the lower index.
pub fn nearest_codes(d: &Tensor, codebook: &Tensor) -> Vec<usize> {
    let (n, _) = d.dims2().expect("2-D tokens");
    let (l, _) = codebook.dims2().expect("2-D codebook");
    (0..n)
        .map(|i| {
            let row = d.row(i);
            let mut best = (f64::INFINITY, 0);
            for k in 0..l {
                let dist: f64 = row.iter().zip(codebook.row(k)).map(|(a, b)| (a - b) * (a - b)).sum();
                if dist < best.0 {
                    best = (dist, k);
                }
            }
            best.1
        })
        .collect()
}

impl Codec {
    pub fn new(config: CodecConfig, grid: GridSpec, seed: u64) -> Result<Self> {
        config.validate()?;
        let geometry = Geometry::new(grid, config.patch, config.scales);
        let mut store = ParamStore::new();
        let mut r = rng::stream(seed, 0xC0DEC);
        let c = config.width;
        let pv = geometry.patch_volume();
        for prefix in ["enc", "pred"] {
            store.add_uniform(format!("{prefix}.empty"), 1, pv, 0.1, &mut r);
            add_linear(&mut store, &format!("{prefix}.embed"), pv, c, &mut r);
            for s in 0..config.scales {
                store.add_uniform(format!("{prefix}.pos.{s}"), geometry.tokens(s), c, 0.02, &mut r);
                if s > 0 {
                    add_linear(&mut store, &format!("{prefix}.merge.{s}"), 8 * c, c, &mut r);
                }
                add_blocks(&mut store, &format!("{prefix}.s{s}"), &config, &mut r);
                if prefix == "enc" {
                    add_linear(&mut store, &format!("enc.shift.{s}"), c, c, &mut r);
                } else {
                    add_linear(&mut store, &format!("pred.head.{s}"), c, config.codebook_size, &mut r);
                }
            }
        }
        for s in 0..config.scales {
            store.add_uniform(format!("cb.{s}"), config.codebook_size, c, 1.0, &mut r);
            let fan_in = if s + 1 == config.scales { c } else { 2 * c };
            add_linear(&mut store, &format!("dec.in.{s}"), fan_in, c, &mut r);
            store.add_uniform(format!("dec.pos.{s}"), geometry.tokens(s), c, 0.02, &mut r);
            add_blocks(&mut store, &format!("dec.s{s}"), &config, &mut r);
        }
        add_linear(&mut store, "dec.out", c, pv, &mut r);
        Ok(Self { config, geometry, store })
    }

    pub fn grid(&self) -> GridSpec {
        self.geometry.grid
    }

    /// Writes `<stem>.codec.json` next to the parameter checkpoint.
    pub fn save(&self, stem: &Path) -> Result<()> {
        self.store.save(stem)?;
        let path = stem.with_extension("codec.json");
        let m = CodecManifest { config: self.config, grid: self.grid() };
        std::fs::write(&path, serde_json::to_vec_pretty(&m)?).map_err(|e| Error::io(&path, e))
    }

    pub fn load(stem: &Path) -> Result<Self> {
        let path = stem.with_extension("codec.json");
        let text = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let m: CodecManifest = serde_json::from_slice(&text)?;
        let fresh = Self::new(m.config, m.grid, 0)?;
        let store = ParamStore::load(stem)?;
        for id in fresh.store.ids() {
            let name = fresh.store.name(id);
            let got = store
                .id(name)
                .ok_or_else(|| Error::Schema(format!("{}: missing parameter {name}", stem.display())))?;
            if store.get(got).shape() != fresh.store.get(id).shape() {
                return Err(Error::Schema(format!("{}: parameter {name} has wrong shape", stem.display())));
            }
        }
        Ok(Self { store, ..fresh })
    }

    fn p(&self, g: &mut Graph, name: &str) -> Var {
        let id = self.store.id(name).unwrap_or_else(|| panic!("unknown parameter {name}"));
        g.param(&self.store, id)
    }

    fn linear(&self, g: &mut Graph, x: Var, prefix: &str) -> Result<Var> {
        let w = self.p(g, &format!("{prefix}.w"));
        let b = self.p(g, &format!("{prefix}.b"));
        let y = g.matmul(x, w)?;
        Ok(g.add_row(y, b)?)
    }

    fn masked(&self, g: &mut Graph, x: Var, mask: Option<Var>) -> Result<Var> {
        match mask {
            Some(m) => Ok(g.mul(x, m)?),
            None => Ok(x),
        }
    }

    /// Pre-LN block. Rows outside `mask` (unoccupied tokens) pass through
    /// unchanged.
    fn block(&self, g: &mut Graph, x: Var, prefix: &str, nbrs: &Rc<Vec<Vec<usize>>>, mask: Option<Var>) -> Result<Var> {
        let h = g.layer_norm(x, LN_EPS)?;
        let q = self.linear(g, h, &format!("{prefix}.q"))?;
        let k = self.linear(g, h, &format!("{prefix}.k"))?;
        let v = self.linear(g, h, &format!("{prefix}.v"))?;
        let a = g.window_attention(q, k, v, nbrs.clone(), self.config.heads)?;
        let o = self.linear(g, a, &format!("{prefix}.o"))?;
        let o = self.masked(g, o, mask)?;
        let x1 = g.add(x, o)?;
        let h2 = g.layer_norm(x1, LN_EPS)?;
        let f = self.linear(g, h2, &format!("{prefix}.f1"))?;
        let f = g.relu(f);
        let f = self.linear(g, f, &format!("{prefix}.f2"))?;
        let f = self.masked(g, f, mask)?;
        Ok(g.add(x1, f)?)
    }

    /// `depth` blocks under parameter prefix `prefix`. With `sparse`, only
    /// occupied tokens attend and are updated.
    pub fn transformer(
        &self,
        g: &mut Graph,
        mut x: Var,
        prefix: &str,
        occupied: &[bool],
        shape: [usize; 3],
        sparse: bool,
    ) -> Result<Var> {
        let nbrs = Rc::new(neighborhoods(shape, occupied, window_radius(self.config.n_win)));
        let mask = if sparse && occupied.iter().any(|o| !o) {
            let c = self.config.width;
            let data = occupied.iter().flat_map(|&o| std::iter::repeat_n(f64::from(u8::from(o)), c)).collect();
            Some(g.constant(Tensor::new(vec![occupied.len(), c], data)))
        } else {
            None
        };
        for b in 0..self.config.depth {
            x = self.block(g, x, &format!("{prefix}.b{b}"), &nbrs, mask)?;
        }
        Ok(x)
    }

    /// Normalized patch matrix `(tokens, patch³)` with zeros at unmeasured
    /// slots, and the matching 0/1 measurement matrix.
    pub fn patch_input(&self, values_dbm: &[f64], measured: &[bool]) -> (Tensor, Tensor) {
        let geo = &self.geometry;
        let shape = vec![geo.tokens(0), geo.patch_volume()];
        let mut x = Tensor::zeros(shape.clone());
        let mut m = Tensor::zeros(shape);
        for (v, &slot) in geo.voxel_slots.iter().enumerate() {
            if measured[v] {
                x.data_mut()[slot] = (values_dbm[v] - self.config.norm_offset_db) / self.config.norm_scale_db;
                m.data_mut()[slot] = 1.0;
            }
        }
        (x, m)
    }

    /// Linear patch embedding plus position encoding. Unmeasured slots take
    /// the learned per-position `empty` value before projection.
    pub fn patch_embed(&self, g: &mut Graph, prefix: &str, values: &[f64], measured: &[bool]) -> Result<Var> {
        let geo = &self.geometry;
        if values.len() != geo.grid.n_blocks() || measured.len() != values.len() {
            return Err(Error::validation("map does not match the codec grid"));
        }
        let (x, m) = self.patch_input(values, measured);
        let n0 = geo.tokens(0);
        let not_m = Tensor::new(m.shape().to_vec(), m.data().iter().map(|v| 1.0 - v).collect());
        let x = g.constant(x);
        let not_m = g.constant(not_m);
        let ones = g.constant(Tensor::filled(vec![n0, 1], 1.0));
        let empty = self.p(g, &format!("{prefix}.empty"));
        let fill = g.matmul(ones, empty)?;
        let fill = g.mul(fill, not_m)?;
        let inp = g.add(x, fill)?;
        let h = self.linear(g, inp, &format!("{prefix}.embed"))?;
        let pos = self.p(g, &format!("{prefix}.pos.0"));
        Ok(g.add(h, pos)?)
    }

    /// Patch embedding plus the token pyramid of one tower.
    fn tower(&self, g: &mut Graph, prefix: &str, values: &[f64], measured: &[bool], sparse: bool) -> Result<Vec<Var>> {
        let geo = &self.geometry;
        let occ = if sparse { geo.occupancy(measured) } else { geo.full_occupancy() };
        let h = self.patch_embed(g, prefix, values, measured)?;
        let mut outs = vec![self.transformer(g, h, &format!("{prefix}.s0"), &occ[0], geo.shapes[0], sparse)?];
        for s in 1..geo.scales() {
            let zero = g.constant(Tensor::zeros(vec![1, self.config.width]));
            let padded = g.concat(&[outs[s - 1], zero], 0)?;
            let kids = g.gather_rows(padded, Rc::from(geo.children[s].as_slice()))?;
            let merged = g.reshape(kids, vec![geo.tokens(s), 8 * self.config.width])?;
            let h = self.linear(g, merged, &format!("{prefix}.merge.{s}"))?;
            let pos = self.p(g, &format!("{prefix}.pos.{s}"));
            let h = g.add(h, pos)?;
            outs.push(self.transformer(g, h, &format!("{prefix}.s{s}"), &occ[s], geo.shapes[s], sparse)?);
        }
        Ok(outs)
    }

    /// Continuous semantic features `d_r` of a complete map, finest first.
    pub fn encode(&self, g: &mut Graph, map: &SpectrumMap) -> Result<Vec<Var>> {
        let all = vec![true; map.values_dbm.len()];
        let feats = self.tower(g, "enc", &map.values_dbm, &all, false)?;
        feats
            .into_iter()
            .enumerate()
            .map(|(s, f)| self.linear(g, f, &format!("enc.shift.{s}")))
            .collect()
    }

    /// Per-scale index logits `(tokens_r, L)` from a masked map.
    pub fn predict_logits(&self, g: &mut Graph, masked: &SpectrumMap, mask: &SampleMask) -> Result<Vec<Var>> {
        let feats = self.tower(g, "pred", &masked.values_dbm, &mask.measured, true)?;
        feats
            .into_iter()
            .enumerate()
            .map(|(s, f)| self.linear(g, f, &format!("pred.head.{s}")))
            .collect()
    }

    pub fn codebook(&self, g: &mut Graph, scale: usize) -> Var {
        self.p(g, &format!("cb.{scale}"))
    }

    pub fn codebook_tensor(&self, scale: usize) -> &Tensor {
        self.store.get(self.store.id(&format!("cb.{scale}")).expect("codebook"))
    }

    /// Nearest-codeword quantization of `d` with its commitment loss.
    /// `frozen` pins the indices and the constant operands of the loss.
    pub fn quantize(
        &self,
        g: &mut Graph,
        scale: usize,
        d: Var,
        gamma: f64,
        frozen: Option<(&[usize], &Anchors)>,
    ) -> Result<QuantizedScale> {
        let cb = self.codebook(g, scale);
        let (indices, anchors) = match frozen {
            Some((idx, a)) => (idx.to_vec(), a.clone()),
            None => {
                let dv = g.value(d).clone();
                let idx = nearest_codes(&dv, self.codebook_tensor(scale));
                let tilde = lookup(self.codebook_tensor(scale), &idx);
                (idx, Anchors { d: dv, tilde })
            }
        };
        let tilde = g.gather_rows(cb, Rc::from(indices.as_slice()))?;
        let c = self.config.width as f64;
        let d_const = g.constant(anchors.d.clone());
        let t_const = g.constant(anchors.tilde.clone());
        let e1 = g.sub(d_const, tilde)?;
        let e2 = g.sub(d, t_const)?;
        let l1 = g.mean_sq(e1);
        let l2 = g.mean_sq(e2);
        let l2 = g.scale(l2, gamma);
        let sum = g.add(l1, l2)?;
        // mean_sq averages over n*C elements; rescale to a per-token sum.
        let loss = g.scale(sum, c);
        Ok(QuantizedScale { indices, tilde, loss, anchors })
    }

    /// Coarse-to-fine decoding of the received semantics `d̂_r` (finest
    /// first) into a `(voxels, 1)` column in dBm.
    pub fn decode(&self, g: &mut Graph, dhat: &[Var]) -> Result<Var> {
        let geo = &self.geometry;
        let r = geo.scales();
        if dhat.len() != r {
            return Err(Error::validation(format!("decoder needs {r} scales, got {}", dhat.len())));
        }
        let mut prev: Option<Var> = None;
        for s in (0..r).rev() {
            let x = match prev {
                None => dhat[s],
                Some(p) => {
                    let up = g.nearest_upsample_3d(p, geo.shapes[s + 1], geo.shapes[s])?;
                    g.concat(&[up, dhat[s]], 1)?
                }
            };
            let h = self.linear(g, x, &format!("dec.in.{s}"))?;
            let pos = self.p(g, &format!("dec.pos.{s}"));
            let h = g.add(h, pos)?;
            let full = vec![true; geo.tokens(s)];
            prev = Some(self.transformer(g, h, &format!("dec.s{s}"), &full, geo.shapes[s], false)?);
        }
        let out = self.linear(g, prev.expect("at least one scale"), "dec.out")?;
        let out = g.scale(out, self.config.norm_scale_db);
        let pv = geo.patch_volume();
        let offset = g.constant(Tensor::filled(vec![1, pv], self.config.norm_offset_db));
        let out = g.add_row(out, offset)?;
        let flat = g.reshape(out, vec![geo.tokens(0) * pv, 1])?;
        Ok(g.gather_rows(flat, Rc::from(geo.voxel_slots.as_slice()))?)
    }

    fn check_indices(&self, idx: &[Vec<usize>]) -> Result<()> {
        if idx.len() != self.geometry.scales() {
            return Err(Error::validation("wrong number of index scales"));
        }
        for (s, v) in idx.iter().enumerate() {
            if v.len() != self.geometry.tokens(s) || v.iter().any(|&i| i >= self.config.codebook_size) {
                return Err(Error::validation(format!("invalid index set at scale {s}")));
            }
        }
        Ok(())
    }

    /// Transmitter-side indices of a complete map.
    pub fn encode_indices(&self, map: &SpectrumMap) -> Result<Vec<Vec<usize>>> {
        let mut g = Graph::new();
        let d = self.encode(&mut g, map)?;
        Ok(d.iter().enumerate().map(|(s, &v)| nearest_codes(g.value(v), self.codebook_tensor(s))).collect())
    }

    /// Argmax predictor indices for a masked map.
    pub fn predict_indices(&self, masked: &SpectrumMap, mask: &SampleMask) -> Result<Vec<Vec<usize>>> {
        let mut g = Graph::new();
        let logits = self.predict_logits(&mut g, masked, mask)?;
        Ok(logits.iter().map(|&l| argmax_rows(g.value(l))).collect())
    }

    pub fn decode_indices(&self, idx: &[Vec<usize>]) -> Result<SpectrumMap> {
        self.check_indices(idx)?;
        let mut g = Graph::new();
        let dhat: Vec<Var> = idx
            .iter()
            .enumerate()
            .map(|(s, i)| g.constant(lookup(self.codebook_tensor(s), i)))
            .collect();
        let out = self.decode(&mut g, &dhat)?;
        SpectrumMap::new(self.grid(), g.value(out).data().to_vec())
    }
}

pub fn lookup(codebook: &Tensor, idx: &[usize]) -> Tensor {
    let (_, c) = codebook.dims2().expect("2-D codebook");
    let data = idx.iter().flat_map(|&i| codebook.row(i).iter().copied()).collect();
    Tensor::new(vec![idx.len(), c], data)
}

pub fn argmax_rows(t: &Tensor) -> Vec<usize> {
    let (n, _) = t.dims2().expect("2-D logits");
    (0..n)
        .map(|i| {
            let row = t.row(i);
            let mut best = 0;
            for (k, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

fn add_linear(store: &mut ParamStore, prefix: &str, fan_in: usize, fan_out: usize, r: &mut impl rand::Rng) {
    store.add_glorot(format!("{prefix}.w"), fan_in, fan_out, r);
    store.add(format!("{prefix}.b"), Tensor::zeros(vec![1, fan_out]));
}

fn add_blocks(store: &mut ParamStore, prefix: &str, cfg: &CodecConfig, r: &mut impl rand::Rng) {
    let c = cfg.width;
    for b in 0..cfg.depth {
        for name in ["q", "k", "v", "o"] {
            add_linear(store, &format!("{prefix}.b{b}.{name}"), c, c, r);
        }
        add_linear(store, &format!("{prefix}.b{b}.f1"), c, 2 * c, r);
        add_linear(store, &format!("{prefix}.b{b}.f2"), 2 * c, c, r);
    }
}
