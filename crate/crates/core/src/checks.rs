//! Finite-difference suites for the reparameterization and the KL term,
//! on top of the per-primitive suites of the tensor crate.

use e2ebt_tensor::gradcheck::{analytic_gradient, numeric_gradient, relative_error, CheckReport};
use e2ebt_tensor::{Graph, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::objectives::kl_rows;
use crate::reparam::{crt_rows, sample_multinoulli};

const H: f64 = 1e-6;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.5..1.5)).collect())
        .expect("shape matches")
}

/// CRT gradient against finite differences of the `lambda * p` surrogate,
/// on a nonlinear downstream loss. Samples are drawn once per point.
fn crt_suite(points: usize, tol: f64, rng: &mut ChaCha8Rng) -> Result<CheckReport> {
    let mut worst: f64 = 0.0;
    for _ in 0..points {
        let (rows, v) = (3, 5);
        let lambda = rng.gen_range(0.05..2.0);
        let logits = random(&[rows, v], rng);
        let w = random(&[v, 2], rng);
        let probs = Graph::<f64>::new();
        let p0 = probs.softmax(probs.var(logits.clone()))?;
        let pv = probs.value(p0);
        let ids: Vec<usize> = (0..rows).map(|r| sample_multinoulli(pv.row(r), rng)).collect();
        // The detached term sits at the unperturbed point.
        let mut offset = Tensor::one_hot(&ids, v)?;
        for (o, &pi) in offset.data_mut().iter_mut().zip(pv.data()) {
            *o -= lambda * pi;
        }
        let downstream = move |g: &Graph<f64>, z: Var| -> Result<Var> {
            let h = g.matmul(z, g.constant(w.clone()))?;
            let h = g.mul(h, h)?;
            Ok(g.sum(h))
        };
        let d2 = downstream.clone();
        let real = move |g: &Graph<f64>, x: &[Var]| -> e2ebt_tensor::Result<Var> {
            let p = g.softmax(x[0])?;
            let (z, _) = crt_rows(g, p, &ids, lambda).map_err(|e| e.into_tensor())?;
            downstream(g, z).map_err(|e| e.into_tensor())
        };
        let surrogate = move |g: &Graph<f64>, x: &[Var]| -> e2ebt_tensor::Result<Var> {
            let p = g.softmax(x[0])?;
            let lp = g.scale(p, lambda);
            let z = g.add(lp, g.constant(offset.clone()))?;
            d2(g, z).map_err(|e| e.into_tensor())
        };
        let a = analytic_gradient(&real, std::slice::from_ref(&logits))?;
        let n = numeric_gradient(&surrogate, std::slice::from_ref(&logits), H)?;
        worst = worst.max(relative_error(&a[0], &n[0]));
    }
    Ok(CheckReport {
        name: "crt (surrogate)".into(),
        points,
        max_rel_err: worst,
        tolerance: tol,
    })
}

fn kl_suite(points: usize, tol: f64, rng: &mut ChaCha8Rng) -> Result<CheckReport> {
    let mut worst: f64 = 0.0;
    for _ in 0..points {
        let inputs = [random(&[4, 6], rng), random(&[4, 6], rng)];
        let f = |g: &Graph<f64>, x: &[Var]| -> e2ebt_tensor::Result<Var> {
            let q = g.softmax(x[0])?;
            let prior = g.softmax(x[1])?;
            kl_rows(g, q, prior).map_err(|e| e.into_tensor())
        };
        let a = analytic_gradient(&f, &inputs)?;
        let n = numeric_gradient(&f, &inputs, H)?;
        for (a, n) in a.iter().zip(&n) {
            worst = worst.max(relative_error(a, n));
        }
    }
    Ok(CheckReport {
        name: "kl_rows".into(),
        points,
        max_rel_err: worst,
        tolerance: tol,
    })
}

/// Every primitive suite followed by the CRT and KL suites.
pub fn run_all(points: usize, tol: f64, seed: u64) -> Result<Vec<CheckReport>> {
    let mut out = e2ebt_tensor::gradcheck::run_suite(points, tol, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    out.push(crt_suite(points, tol, &mut rng)?);
    out.push(kl_suite(points, tol, &mut rng)?);
    Ok(out)
}
