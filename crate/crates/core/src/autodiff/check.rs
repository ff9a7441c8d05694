//! Central-difference gradient checks.

use std::rc::Rc;
use std::sync::Arc;

use rand::Rng;

use super::{Graph, Neighborhoods, ParamId, ParamStore, SparseRows, Tensor, Var};
use crate::rng::{self, StreamRng};

/// Worst norm-wise relative error, over `ids`, between the analytic
/// gradient of the scalar built by `loss` and central differences with
/// step `eps`. Every coordinate of every listed parameter is perturbed.
///
/// Each parameter's denominator is floored at 1e-3 of the global gradient
/// norm: a parameter the loss is invariant to (a key bias under softmax,
/// say) has two round-off-sized gradients whose ratio means nothing.
pub fn gradcheck<F>(store: &mut ParamStore, ids: &[ParamId], eps: f64, mut loss: F) -> f64
where
    F: FnMut(&mut Graph, &ParamStore) -> Var,
{
    let mut g = Graph::new();
    let l = loss(&mut g, store);
    g.backward(l).expect("scalar loss");
    let analytic = g.param_grads().expect("after backward");
    let mut eval = |store: &ParamStore| {
        let mut g = Graph::new();
        let l = loss(&mut g, store);
        g.scalar(l)
    };
    let mut pairs = Vec::with_capacity(ids.len());
    for &id in ids {
        let n = store.get(id).len();
        let mut numeric = vec![0.0; n];
        for (i, slot) in numeric.iter_mut().enumerate() {
            let orig = store.get(id).data()[i];
            store.get_mut(id).data_mut()[i] = orig + eps;
            let up = eval(store);
            store.get_mut(id).data_mut()[i] = orig - eps;
            let down = eval(store);
            store.get_mut(id).data_mut()[i] = orig;
            *slot = (up - down) / (2.0 * eps);
        }
        let a = analytic.get(&id).cloned().unwrap_or_else(|| vec![0.0; n]);
        pairs.push((a, numeric));
    }
    let global = pairs.iter().flat_map(|p| &p.0).map(|x| x * x).sum::<f64>().sqrt();
    pairs
        .iter()
        .map(|(a, b)| {
            let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            diff / norm(a).max(norm(b)).max(1e-3 * global).max(1e-12)
        })
        .fold(0.0, f64::max)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

type Build = Box<dyn Fn(&mut Graph, &[Var]) -> Var>;
type Case = fn(&mut StreamRng) -> (Vec<Tensor>, Build);

fn rand_tensor(r: &mut StreamRng, shape: Vec<usize>) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| r.random_range(-1.0..1.0)).collect())
}

/// Magnitudes in [0.1, 1) so relu kinks are not straddled.
fn rand_away_from_zero(r: &mut StreamRng, shape: Vec<usize>) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = r.random_range(0.1..1.0);
            if r.random_bool(0.5) { m } else { -m }
        })
        .collect();
    Tensor::new(shape, data)
}

fn dim(r: &mut StreamRng) -> usize {
    r.random_range(1..6)
}

fn cases() -> Vec<(&'static str, Case)> {
    vec![
        ("matmul", |r| {
            let (m, k, n) = (dim(r), dim(r), dim(r));
            (vec![rand_tensor(r, vec![m, k]), rand_tensor(r, vec![k, n])], Box::new(|g, v| g.matmul(v[0], v[1]).unwrap()))
        }),
        ("add/sub/mul", |r| {
            let s = vec![dim(r), dim(r)];
            (
                vec![rand_tensor(r, s.clone()), rand_tensor(r, s)],
                Box::new(|g, v| {
                    let a = g.add(v[0], v[1]).unwrap();
                    let b = g.sub(v[0], v[1]).unwrap();
                    g.mul(a, b).unwrap()
                }),
            )
        }),
        ("add_row/scale", |r| {
            let (m, n) = (dim(r), dim(r));
            let f = r.random_range(-2.0..2.0);
            (
                vec![rand_tensor(r, vec![m, n]), rand_tensor(r, vec![1, n])],
                Box::new(move |g, v| {
                    let a = g.add_row(v[0], v[1]).unwrap();
                    g.scale(a, f)
                }),
            )
        }),
        ("relu", |r| {
            let s = vec![dim(r), dim(r)];
            (vec![rand_away_from_zero(r, s)], Box::new(|g, v| g.relu(v[0])))
        }),
        ("transpose/reshape", |r| {
            let (m, n) = (dim(r), dim(r));
            (
                vec![rand_tensor(r, vec![m, n])],
                Box::new(move |g, v| {
                    let t = g.transpose(v[0]).unwrap();
                    g.reshape(t, vec![1, m * n]).unwrap()
                }),
            )
        }),
        ("concat", |r| {
            let axis = r.random_range(0..2);
            let (m, n, other) = (dim(r), dim(r), dim(r));
            let s2 = if axis == 0 { vec![other, n] } else { vec![m, other] };
            (
                vec![rand_tensor(r, vec![m, n]), rand_tensor(r, s2)],
                Box::new(move |g, v| g.concat(&[v[0], v[1], v[0]], axis).unwrap()),
            )
        }),
        ("gather_rows", |r| {
            let (m, n) = (dim(r), dim(r));
            let idx: Rc<[usize]> = (0..r.random_range(1..8)).map(|_| r.random_range(0..m)).collect();
            (vec![rand_tensor(r, vec![m, n])], Box::new(move |g, v| g.gather_rows(v[0], idx.clone()).unwrap()))
        }),
        ("nearest_upsample_3d", |r| {
            let src = [dim(r), dim(r), r.random_range(1..3)];
            let dst = [2 * src[0] - r.random_range(0..2), 2 * src[1], 2 * src[2] - 1];
            (
                vec![rand_tensor(r, vec![src.iter().product(), 3])],
                Box::new(move |g, v| g.nearest_upsample_3d(v[0], src, dst).unwrap()),
            )
        }),
        ("softmax", |r| {
            let axis = r.random_range(0..2);
            let s = vec![dim(r), dim(r)];
            (vec![rand_tensor(r, s)], Box::new(move |g, v| g.softmax(v[0], axis).unwrap()))
        }),
        ("layer_norm", |r| {
            // Two columns normalize to a constant ±1 and leave nothing to check.
            let s = vec![dim(r), r.random_range(3..7)];
            (vec![rand_tensor(r, s)], Box::new(|g, v| g.layer_norm(v[0], 1e-5).unwrap()))
        }),
        ("mean_sq/sum", |r| {
            let s = vec![dim(r), dim(r)];
            (
                vec![rand_tensor(r, s)],
                Box::new(|g, v| {
                    let a = g.mean_sq(v[0]);
                    let b = g.sum(v[0]);
                    g.mul(a, b).unwrap()
                }),
            )
        }),
        ("cross_entropy_logits", |r| {
            let (m, n) = (dim(r), r.random_range(2..7));
            let targets: Rc<[usize]> = (0..m).map(|_| r.random_range(0..n)).collect();
            (
                vec![rand_tensor(r, vec![m, n])],
                Box::new(move |g, v| g.cross_entropy_logits(v[0], targets.clone()).unwrap()),
            )
        }),
        ("sparse_linear", |r| {
            let m = dim(r) + 2;
            let rows: Vec<Vec<(usize, f64)>> = (0..dim(r))
                .map(|_| (0..r.random_range(1..4)).map(|_| (r.random_range(0..m), r.random_range(-1.0..1.0))).collect())
                .collect();
            let rows = Arc::new(SparseRows { rows });
            (vec![rand_tensor(r, vec![m, 1])], Box::new(move |g, v| g.sparse_linear(v[0], rows.clone()).unwrap()))
        }),
        ("window_attention", |r| {
            let n = r.random_range(2..7);
            let heads = r.random_range(1..3);
            let c = heads * r.random_range(1..4);
            let nbrs: Neighborhoods = (0..n)
                .map(|i| {
                    if r.random_bool(0.2) {
                        return Vec::new();
                    }
                    let mut l: Vec<usize> = (0..n).filter(|_| r.random_bool(0.5)).collect();
                    if !l.contains(&i) {
                        l.push(i);
                    }
                    l
                })
                .collect();
            let nbrs = Rc::new(nbrs);
            (
                (0..3).map(|_| rand_tensor(r, vec![n, c])).collect(),
                Box::new(move |g, v| g.window_attention(v[0], v[1], v[2], nbrs.clone(), heads).unwrap()),
            )
        }),
        ("mlp", |r| {
            let (b, i, o) = (dim(r), dim(r), dim(r));
            let h = r.random_range(3..7);
            (
                vec![
                    rand_tensor(r, vec![b, i]),
                    rand_tensor(r, vec![i, h]),
                    rand_tensor(r, vec![1, h]),
                    rand_tensor(r, vec![h, o]),
                ],
                Box::new(|g, v| {
                    let z = g.matmul(v[0], v[1]).unwrap();
                    let z = g.add_row(z, v[2]).unwrap();
                    let z = g.layer_norm(z, 1e-5).unwrap();
                    let z = g.softmax(z, 1).unwrap();
                    g.matmul(z, v[3]).unwrap()
                }),
            )
        }),
    ]
}

/// Runs `trials` random draws of every differentiable op (each output
/// contracted with a fixed random probe) and returns the worst relative
/// error per op.
pub fn op_suite(trials: usize, seed: u64) -> Vec<(&'static str, f64)> {
    cases()
        .into_iter()
        .enumerate()
        .map(|(c, (name, case))| {
            let mut r = rng::stream(seed, c as u64);
            let mut worst: f64 = 0.0;
            for _ in 0..trials {
                let (inputs, build) = case(&mut r);
                let mut store = ParamStore::new();
                let ids: Vec<ParamId> =
                    inputs.into_iter().enumerate().map(|(i, t)| store.add(format!("p{i}"), t)).collect();
                let mut g = Graph::new();
                let vars: Vec<Var> = ids.iter().map(|&id| g.param(&store, id)).collect();
                let out = build(&mut g, &vars);
                let probe = rand_tensor(&mut r, g.value(out).shape().to_vec());
                let err = gradcheck(&mut store, &ids, 1e-6, |g, s| {
                    let vars: Vec<Var> = ids.iter().map(|&id| g.param(s, id)).collect();
                    let out = build(g, &vars);
                    let p = g.constant(probe.clone());
                    let prod = g.mul(out, p).unwrap();
                    g.sum(prod)
                });
                worst = worst.max(err);
            }
            (name, worst)
        })
        .collect()
}
