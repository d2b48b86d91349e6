//! Central finite-difference checks for the differentiable primitives.
//!
//! The numeric side only ever evaluates forward values, so it stays
//! independent of the backward rules it checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Builds a scalar loss from leaf inputs on a fresh graph.
pub type LossFn = dyn Fn(&Graph<f64>, &[Var]) -> Result<Var>;

#[derive(Clone, Debug)]
pub struct CheckReport {
    pub name: String,
    pub points: usize,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tolerance
    }
}

/// Max-norm relative error between two gradient vectors.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let mut diff: f64 = 0.0;
    let mut scale: f64 = 1e-12;
    for (&a, &n) in analytic.iter().zip(numeric) {
        diff = diff.max((a - n).abs());
        scale = scale.max(a.abs()).max(n.abs());
    }
    diff / scale
}

fn eval(f: &LossFn, inputs: &[Tensor<f64>]) -> Result<f64> {
    let g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.var(t.clone())).collect();
    let loss = f(&g, &vars)?;
    Ok(g.value(loss).item())
}

/// Central-difference gradient of `f` with respect to every input entry.
pub fn numeric_gradient(f: &LossFn, inputs: &[Tensor<f64>], h: f64) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(inputs.len());
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for i in 0..inputs.len() {
        let mut gi = Vec::with_capacity(inputs[i].numel());
        for j in 0..inputs[i].numel() {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + h;
            let plus = eval(f, &work)?;
            work[i].data_mut()[j] = orig - h;
            let minus = eval(f, &work)?;
            work[i].data_mut()[j] = orig;
            gi.push((plus - minus) / (2.0 * h));
        }
        out.push(gi);
    }
    Ok(out)
}

/// Reverse-mode gradient of `f` with respect to every input.
pub fn analytic_gradient(f: &LossFn, inputs: &[Tensor<f64>]) -> Result<Vec<Vec<f64>>> {
    let g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.var(t.clone())).collect();
    let loss = f(&g, &vars)?;
    let grads = g.backward(loss)?;
    Ok(vars.iter().map(|&v| grads.wrt(v).into_data()).collect())
}

/// Worst relative error over all inputs at one point.
pub fn check_point(f: &LossFn, inputs: &[Tensor<f64>], h: f64) -> Result<f64> {
    let a = analytic_gradient(f, inputs)?;
    let n = numeric_gradient(f, inputs, h)?;
    Ok(a.iter()
        .zip(&n)
        .map(|(a, n)| relative_error(a, n))
        .fold(0.0, f64::max))
}

type InputGen = Box<dyn Fn(&mut ChaCha8Rng) -> Vec<Tensor<f64>>>;

/// One primitive under test: an input generator and a scalar loss.
pub struct Case {
    pub name: &'static str,
    pub inputs: InputGen,
    pub loss: Box<LossFn>,
}

fn randn(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn positive(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    randn(rng, shape).map(|v| 0.5 + v.abs())
}

/// Away from zero so the relu kink is never straddled by the difference.
fn off_kink(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    randn(rng, shape).map(|v| if v.abs() < 0.1 { v + 0.2f64.copysign(v) } else { v })
}

fn probs(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<f64> {
    let mut t = positive(rng, &[rows, cols]);
    for r in 0..rows {
        let s: f64 = t.row(r).iter().sum();
        for v in t.row_mut(r) {
            *v /= s;
        }
    }
    t
}

/// Weighted sum with fixed pseudo-random weights so every output entry
/// contributes a distinct coefficient.
fn weigh(g: &Graph<f64>, v: Var) -> Result<Var> {
    let shape = g.shape(v);
    let n: usize = shape.iter().product();
    let w: Vec<f64> = (0..n).map(|i| ((i as f64 * 0.7311).sin() + 1.3) * 0.5).collect();
    let w = g.constant(Tensor::new(shape, w)?);
    g.dot(v, w)
}

/// Every differentiable primitive with a representative loss.
pub fn primitive_cases() -> Vec<Case> {
    let mut cases: Vec<Case> = Vec::new();
    macro_rules! case {
        ($name:expr, $inputs:expr, $loss:expr) => {
            cases.push(Case {
                name: $name,
                inputs: Box::new($inputs),
                loss: Box::new($loss),
            })
        };
    }
    case!("add", |r| vec![randn(r, &[3, 4]), randn(r, &[3, 4])], |g, v| {
        let y = g.add(v[0], v[1])?;
        weigh(g, y)
    });
    case!("sub", |r| vec![randn(r, &[3, 4]), randn(r, &[3, 4])], |g, v| {
        let y = g.sub(v[0], v[1])?;
        weigh(g, y)
    });
    case!("mul", |r| vec![randn(r, &[3, 4]), randn(r, &[3, 4])], |g, v| {
        let y = g.mul(v[0], v[1])?;
        weigh(g, y)
    });
    case!("scale", |r| vec![randn(r, &[5])], |g, v| {
        let y = g.scale(v[0], 0.37);
        weigh(g, y)
    });
    case!("add_row", |r| vec![randn(r, &[3, 4]), randn(r, &[4])], |g, v| {
        let y = g.add_row(v[0], v[1])?;
        weigh(g, y)
    });
    case!("matmul", |r| vec![randn(r, &[3, 4]), randn(r, &[4, 2])], |g, v| {
        let y = g.matmul(v[0], v[1])?;
        weigh(g, y)
    });
    case!("matmul_transposed", |r| vec![randn(r, &[4, 3]), randn(r, &[2, 4])], |g, v| {
        let y = g.matmul_t(v[0], v[1], true, true)?;
        weigh(g, y)
    });
    case!("gather", |r| vec![randn(r, &[5, 3])], |g, v| {
        let y = g.gather(v[0], &[4, 0, 4, 2])?;
        weigh(g, y)
    });
    case!("one_hot_embedding", |r| vec![probs(r, 3, 5), randn(r, &[5, 4])], |g, v| {
        let y = g.matmul(v[0], v[1])?;
        weigh(g, y)
    });
    case!("softmax", |r| vec![randn(r, &[3, 5])], |g, v| {
        let y = g.softmax(v[0])?;
        weigh(g, y)
    });
    case!("log_softmax", |r| vec![randn(r, &[3, 5])], |g, v| {
        let y = g.log_softmax(v[0])?;
        weigh(g, y)
    });
    case!("log", |r| vec![positive(r, &[6])], |g, v| {
        let y = g.log(v[0]);
        weigh(g, y)
    });
    case!("exp", |r| vec![randn(r, &[6])], |g, v| {
        let y = g.exp(v[0]);
        weigh(g, y)
    });
    case!("relu", |r| vec![off_kink(r, &[8])], |g, v| {
        let y = g.relu(v[0]);
        weigh(g, y)
    });
    case!(
        "layer_norm",
        |r| vec![randn(r, &[3, 6]), randn(r, &[6]), randn(r, &[6])],
        |g, v| {
            let y = g.layer_norm(v[0], v[1], v[2], 1e-5)?;
            weigh(g, y)
        }
    );
    case!(
        "attention",
        |r| vec![randn(r, &[3, 4]), randn(r, &[5, 4]), randn(r, &[5, 4])],
        |g, v| {
            let y = g.attention(v[0], v[1], v[2], 2, false)?;
            weigh(g, y)
        }
    );
    case!(
        "masked_attention",
        |r| vec![randn(r, &[4, 6]), randn(r, &[4, 6]), randn(r, &[4, 6])],
        |g, v| {
            let y = g.attention(v[0], v[1], v[2], 3, true)?;
            weigh(g, y)
        }
    );
    case!("concat_rows", |r| vec![randn(r, &[2, 3]), randn(r, &[1, 3])], |g, v| {
        let y = g.concat_rows(&[v[0], v[1], v[0]])?;
        weigh(g, y)
    });
    case!("slice_rows", |r| vec![randn(r, &[4, 3])], |g, v| {
        let y = g.slice_rows(v[0], 1, 2)?;
        weigh(g, y)
    });
    case!("cross_entropy", |r| vec![randn(r, &[3, 5])], |g, v| {
        g.cross_entropy(v[0], &[1, 4, 0])
    });
    case!(
        "cross_entropy_probs",
        |r| vec![randn(r, &[3, 5]), probs(r, 3, 5)],
        |g, v| g.cross_entropy_probs(v[0], v[1])
    );
    case!("kl_categorical", |r| vec![probs(r, 4, 6), probs(r, 4, 6)], |g, v| {
        g.kl_categorical(v[0], v[1])
    });
    case!("dropout", |r| vec![randn(r, &[4, 5])], |g, v| {
        let mut mask_rng = ChaCha8Rng::seed_from_u64(7);
        let y = g.dropout(v[0], 0.3, &mut mask_rng)?;
        weigh(g, y)
    });
    cases
}

/// Run every case at `points` random inputs.
pub fn run_suite(points: usize, tolerance: f64, seed: u64) -> Result<Vec<CheckReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    primitive_cases()
        .into_iter()
        .map(|case| {
            let mut worst: f64 = 0.0;
            for _ in 0..points {
                let inputs = (case.inputs)(&mut rng);
                worst = worst.max(check_point(&*case.loss, &inputs, 1e-5)?);
            }
            Ok(CheckReport {
                name: case.name.to_string(),
                points,
                max_rel_err: worst,
                tolerance,
            })
        })
        .collect()
}
