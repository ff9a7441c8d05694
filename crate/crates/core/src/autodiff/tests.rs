use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

#[test]
fn fd_every_op() {
    for (name, err) in check::op_suite(20, 0xfd) {
        assert!(err < 1e-6, "{name}: rel err {err:e}");
    }
}

#[test]
fn gradcheck_flags_a_wrong_gradient() {
    // relu evaluated exactly at its kink: the one-sided analytic gradient
    // disagrees with the symmetric difference.
    let mut store = ParamStore::new();
    let id = store.add("x", Tensor::new(vec![1, 1], vec![0.0]));
    let err = check::gradcheck(&mut store, &[id], 1e-6, |g, s| {
        let x = g.param(s, id);
        let r = g.relu(x);
        g.sum(r)
    });
    assert!(err > 0.1);
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
}

#[test]
fn straight_through_copies_downstream_gradient() {
    let mut g = Graph::new();
    let pass = g.constant(Tensor::new(vec![1, 3], vec![0.1, 0.2, 0.3]));
    let quant = g.constant(Tensor::new(vec![1, 3], vec![1.0, 2.0, 3.0]));
    let st = g.straight_through(pass, quant).unwrap();
    assert_eq!(g.value(st).data(), &[1.0, 2.0, 3.0]);
    let w = g.constant(Tensor::new(vec![1, 3], vec![5.0, -7.0, 0.5]));
    let y = g.mul(st, w).unwrap();
    let loss = g.sum(y);
    g.backward(loss).unwrap();
    assert_eq!(g.grad(st).unwrap().unwrap(), g.grad(pass).unwrap().unwrap());
    assert_eq!(g.grad(pass).unwrap().unwrap(), &[5.0, -7.0, 0.5]);
    assert!(g.grad(quant).unwrap().is_none());
}

#[test]
fn product_rule_scalar() {
    let mut store = ParamStore::new();
    let x = store.add("x", Tensor::scalar(3.0));
    let y = store.add("y", Tensor::scalar(4.0));
    let mut g = Graph::new();
    let (vx, vy) = (g.param(&store, x), g.param(&store, y));
    let p = g.mul(vx, vy).unwrap();
    g.backward(p).unwrap();
    let grads = g.param_grads().unwrap();
    assert_eq!(grads[&x], vec![4.0]);
    assert_eq!(grads[&y], vec![3.0]);
}

#[test]
fn softmax_rows_sum_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut g = Graph::new();
    let a = g.constant(rand_tensor(&mut rng, vec![7, 11]));
    let big = g.scale(a, 400.0);
    let s = g.softmax(big, 1).unwrap();
    for i in 0..7 {
        let total: f64 = g.value(s).row(i).iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
}

#[test]
fn matmul_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = rand_tensor(&mut rng, vec![4, 3]);
    let mut eye = Tensor::zeros(vec![3, 3]);
    for i in 0..3 {
        eye.data_mut()[i * 3 + i] = 1.0;
    }
    let mut g = Graph::new();
    let a = g.constant(x.clone());
    let e = g.constant(eye);
    let y = g.matmul(a, e).unwrap();
    assert_eq!(g.value(y), &x);
}

#[test]
fn cross_entropy_uniform_logits_is_ln_classes() {
    let mut g = Graph::new();
    let logits = g.constant(Tensor::zeros(vec![1, 256]));
    let ce = g.cross_entropy_logits(logits, vec![17].into()).unwrap();
    assert!((g.scalar(ce) - 256f64.ln()).abs() < 1e-12);
}

#[test]
fn shape_mismatch_is_a_build_error() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::zeros(vec![2, 3]));
    let b = g.constant(Tensor::zeros(vec![2, 3]));
    assert!(matches!(g.matmul(a, b), Err(GraphError::Shape { op: "matmul", .. })));
    let c = g.constant(Tensor::zeros(vec![3, 2]));
    assert!(g.add(a, c).is_err());
}

#[test]
fn grads_before_backward_is_state_error() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::scalar(1.0));
    assert_eq!(g.grad(a), Err(GraphError::NoBackward));
    assert!(g.param_grads().is_err());
}

#[test]
fn f32_mode_rounds_values() {
    let mut g = Graph::with_precision(Precision::F32);
    let a = g.constant(Tensor::scalar(0.1));
    assert_eq!(g.scalar(a), 0.1f32 as f64);
}

#[test]
fn deterministic_backward() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = rand_tensor(&mut rng, vec![5, 4]);
        let w = rand_tensor(&mut rng, vec![4, 4]);
        let mut store = ParamStore::new();
        let wid = store.add("w", w);
        let mut g = Graph::new();
        let xv = g.constant(x);
        let wv = g.param(&store, wid);
        let y = g.matmul(xv, wv).unwrap();
        let s = g.softmax(y, 1).unwrap();
        let l = g.mean_sq(s);
        g.backward(l).unwrap();
        (g.scalar(l).to_bits(), g.param_grads().unwrap()[&wid].clone())
    };
    assert_eq!(run(), run());
}
