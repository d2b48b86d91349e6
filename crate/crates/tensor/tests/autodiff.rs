use e2ebt_tensor::gradcheck::{check_point, numeric_gradient, run_suite, LossFn};
use e2ebt_tensor::{Graph, ParamStore, Params, Tensor, TensorError};
use proptest::prelude::*;

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

#[test]
fn softmax_uniform_and_analytic() {
    let g = Graph::<f64>::new();
    let x = g.constant(Tensor::vector(vec![0.0, 0.0, 0.0]));
    let p = g.softmax(x).unwrap();
    assert!(close(g.value(p).data(), &[1.0 / 3.0; 3], 1e-15));

    let x = g.constant(Tensor::vector(vec![0.0, 3f64.ln()]));
    let p = g.softmax(x).unwrap();
    assert!(close(g.value(p).data(), &[0.25, 0.75], 1e-15));
    assert_eq!(g.softmax_count(), 2);
}

#[test]
fn softmax_counts_rows_and_rejects_non_finite() {
    let g = Graph::<f64>::new();
    let x = g.constant(Tensor::matrix(3, 2, vec![0.0; 6]).unwrap());
    g.softmax(x).unwrap();
    assert_eq!(g.softmax_count(), 3);
    let bad = g.constant(Tensor::vector(vec![0.0, f64::NAN]));
    assert!(matches!(g.softmax(bad), Err(TensorError::NonFinite { .. })));
    let inf = g.constant(Tensor::vector(vec![f64::INFINITY, 0.0]));
    assert!(g.softmax(inf).is_err());
    assert_eq!(g.softmax_count(), 3);
}

proptest! {
    #[test]
    fn softmax_is_shift_invariant(c in -50.0f64..50.0, xs in prop::collection::vec(-5.0f64..5.0, 1..12)) {
        let g = Graph::<f64>::new();
        let a = g.constant(Tensor::vector(xs.clone()));
        let b = g.constant(Tensor::vector(xs.iter().map(|v| v + c).collect()));
        let (pa, pb) = (g.softmax(a).unwrap(), g.softmax(b).unwrap());
        let (pa, pb) = (g.value(pa), g.value(pb));
        prop_assert!(close(pa.data(), pb.data(), 1e-12));
        let s: f64 = pa.data().iter().sum();
        prop_assert!((s - 1.0).abs() <= 1e-6);
        prop_assert!(pa.data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn detach_forward_is_bitwise_identity(xs in prop::collection::vec(-1e6f64..1e6, 1..32)) {
        let g = Graph::<f64>::new();
        let x = g.var(Tensor::vector(xs));
        let d = g.detach(x);
        let (vx, vd) = (g.value(x), g.value(d));
        prop_assert_eq!(vx.data(), vd.data());
        prop_assert!(!g.requires_grad(d));
        prop_assert!(g.is_leaf(d));
    }
}

#[test]
fn detach_severs_one_branch() {
    let g = Graph::<f64>::new();
    let x = g.var(Tensor::vector(vec![1.5, -2.0]));
    let y = g.add(x, g.detach(x)).unwrap();
    let loss = g.sum(y);
    let grads = g.backward(loss).unwrap();
    assert_eq!(grads.wrt(x).data(), &[1.0, 1.0]);

    let g = Graph::<f64>::new();
    let x = g.var(Tensor::vector(vec![1.5, -2.0]));
    let y = g.mul(g.detach(x), x).unwrap();
    let loss = g.sum(y);
    let grads = g.backward(loss).unwrap();
    assert_eq!(grads.wrt(x).data(), &[1.5, -2.0]);
}

#[test]
fn detached_subexpression_gets_exactly_zero() {
    let g = Graph::<f64>::new();
    let x = g.var(Tensor::vector(vec![0.3, 0.1, -0.7]));
    let w = g.var(Tensor::vector(vec![2.0, 1.0, 4.0]));
    let inner = g.mul(x, w).unwrap();
    let inner = g.exp(inner);
    let cut = g.detach(inner);
    let other = g.var(Tensor::vector(vec![1.0, 1.0, 1.0]));
    let y = g.mul(cut, other).unwrap();
    let loss = g.sum(y);
    let grads = g.backward(loss).unwrap();
    assert!(grads.wrt(x).data().iter().all(|&v| v == 0.0));
    assert!(grads.wrt(w).data().iter().all(|&v| v == 0.0));
    assert!(grads.wrt(other).data().iter().all(|&v| v != 0.0));
}

#[test]
fn sum_of_squares_gradient() {
    let g = Graph::<f64>::new();
    let x = g.var(Tensor::vector(vec![0.5, -1.0, 2.0, 0.0]));
    let sq = g.mul(x, x).unwrap();
    let loss = g.sum(sq);
    let grads = g.backward(loss).unwrap();
    assert_eq!(grads.wrt(x).data(), &[1.0, -2.0, 4.0, 0.0]);
}

#[test]
fn weighted_softmax_matches_central_differences() {
    let w = [0.3, -1.2, 0.8, 2.0];
    let f = move |g: &Graph<f64>, v: &[e2ebt_tensor::Var]| {
        let p = g.softmax(v[0])?;
        let wv = g.constant(Tensor::vector(w.to_vec()));
        g.dot(p, wv)
    };
    let x = Tensor::vector(vec![0.1, -0.4, 1.3, 0.2]);
    let err = check_point(&f as &LossFn, &[x.clone()], 1e-5).unwrap();
    assert!(err <= 1e-5, "rel err {err}");
    let numeric = numeric_gradient(&f as &LossFn, &[x], 1e-5).unwrap();
    assert!(numeric[0].iter().any(|v| v.abs() > 1e-3));
}

#[test]
fn disconnected_parameter_gets_zero_gradient() {
    let mut store = ParamStore::<f64>::new();
    let used = store.add("used", Tensor::vector(vec![1.0, 2.0]));
    let unused = store.add("unused", Tensor::vector(vec![3.0]));
    let g = Graph::new();
    let p = Params::trainable(&store);
    let u = g.param(p, used);
    let _ = g.param(p, unused);
    assert_eq!(g.param(p, used), u, "bindings are memoized");
    let loss = g.sum(u);
    let grads = g.backward(loss).unwrap();
    let pg = grads.params(&store);
    assert_eq!(pg.len(), 2);
    assert_eq!(pg[1].1.data(), &[0.0]);
    assert_eq!(pg[0].1.data(), &[1.0, 1.0]);
}

#[test]
fn frozen_params_collect_no_gradient() {
    let mut store = ParamStore::<f64>::new();
    let id = store.add("w", Tensor::vector(vec![1.0, 2.0]));
    let g = Graph::new();
    let w = g.param(Params::frozen(&store), id);
    let x = g.var(Tensor::vector(vec![3.0, 4.0]));
    let loss = g.dot(x, w).unwrap();
    let grads = g.backward(loss).unwrap();
    assert!(grads.params(&store).is_empty());
    assert_eq!(grads.wrt(x).data(), &[1.0, 2.0]);
    assert!(grads.get(w).is_none());
}

#[test]
fn non_scalar_loss_is_rejected() {
    let g = Graph::<f64>::new();
    let x = g.var(Tensor::vector(vec![1.0, 2.0]));
    assert!(matches!(g.backward(x), Err(TensorError::NonScalarLoss(_))));
}

#[test]
fn one_hot_matmul_equals_gather() {
    let g = Graph::<f64>::new();
    let table = g.var(Tensor::matrix(4, 3, (0..12).map(|v| v as f64 * 0.37 - 1.0).collect()).unwrap());
    let ids = [2, 0, 3, 3];
    let by_id = g.gather(table, &ids).unwrap();
    let oh = g.constant(Tensor::one_hot(&ids, 4).unwrap());
    let by_oh = g.matmul(oh, table).unwrap();
    assert_eq!(g.value(by_id).data(), g.value(by_oh).data());
}

#[test]
fn causal_attention_ignores_future_rows() {
    let mk = |tail: f64| {
        let g = Graph::<f64>::new();
        let mut data: Vec<f64> = (0..16).map(|v| (v as f64 * 0.61).sin()).collect();
        for v in &mut data[12..] {
            *v += tail;
        }
        let x = g.constant(Tensor::matrix(4, 4, data).unwrap());
        let y = g.attention(x, x, x, 2, true).unwrap();
        g.value(y).data()[..12].to_vec()
    };
    assert_eq!(mk(0.0), mk(5.0));
}

#[test]
fn every_primitive_passes_finite_differences() {
    let reports = run_suite(20, 1e-4, 11).unwrap();
    for r in &reports {
        assert!(r.passed(), "{} rel err {}", r.name, r.max_rel_err);
    }
    assert!(reports.len() >= 20);
}

#[test]
fn kl_matches_direct_sum_and_handles_zeros() {
    let g = Graph::<f64>::new();
    let q = g.constant(Tensor::vector(vec![1.0, 0.0]));
    let p = g.constant(Tensor::vector(vec![0.5, 0.5]));
    let kl = g.kl_categorical(q, p).unwrap();
    assert!((g.value(kl).item() - 2f64.ln()).abs() < 1e-15);
    let kl = g.kl_categorical(p, p).unwrap();
    assert_eq!(g.value(kl).item(), 0.0);
}
