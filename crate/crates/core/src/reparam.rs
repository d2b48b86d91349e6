//! Differentiable discrete samples.
//!
//! The categorical trick builds `z = lambda * p + detach(c)` where the
//! conjugate part `c = s * (1 - lambda * p) + (1 - s) * (-lambda * p)` is a
//! constant of the graph. The forward value of `z` is the sample `s`; the
//! backward pass sees only `lambda * p`, so `dL/dp = lambda * dL/dz`.
//!
//! Sampling is separate from reparameterization: any one-hot `s` can be
//! reparameterized, however it was chosen.

use e2ebt_tensor::{argmax, Graph, Scalar, Tensor, Var};
use rand::Rng;

use crate::error::{CoreError, Result};

/// Tolerance on `sum(p) == 1`.
pub const SIMPLEX_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SamplingStrategy {
    Greedy,
    Stochastic,
    /// Stochastic with probability `stochastic_ratio`, greedy otherwise.
    Mixed { stochastic_ratio: f64 },
}

impl SamplingStrategy {
    pub fn mixed(stochastic_ratio: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&stochastic_ratio) {
            return Err(CoreError::InvalidArgument(format!(
                "stochastic ratio {stochastic_ratio} outside [0, 1]"
            )));
        }
        Ok(SamplingStrategy::Mixed { stochastic_ratio })
    }
}

/// A sampled word: index of the single 1 in a vector of width `dim`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OneHot {
    pub index: usize,
    pub dim: usize,
}

impl OneHot {
    pub fn to_vec<T: Scalar>(self) -> Vec<T> {
        let mut v = vec![T::zero(); self.dim];
        v[self.index] = T::one();
        v
    }

    /// Validate a dense 0/1 vector with exactly one 1.
    pub fn from_dense<T: Scalar>(s: &[T]) -> Result<Self> {
        let mut index = None;
        for (i, &v) in s.iter().enumerate() {
            if v == T::one() {
                if index.replace(i).is_some() {
                    return Err(CoreError::NotOneHot("more than one entry is 1".into()));
                }
            } else if v != T::zero() {
                return Err(CoreError::NotOneHot(format!("entry {i} is {v}")));
            }
        }
        let index = index.ok_or_else(|| CoreError::NotOneHot("no entry is 1".into()))?;
        Ok(OneHot {
            index,
            dim: s.len(),
        })
    }
}

/// A differentiable one-hot word.
#[derive(Clone, Copy, Debug)]
pub struct ReparamOutput {
    /// Forward value equals the sample; gradient flows through `p`.
    pub z: Var,
    pub token_id: usize,
    /// Distribution the sample was reparameterized against.
    pub p: Var,
    pub lambda: f64,
}

/// A differentiable Bernoulli sample.
#[derive(Clone, Copy, Debug)]
pub struct BinarySample {
    pub z: Var,
    pub s: bool,
    pub c: f64,
}

/// Straight-through Bernoulli reparameterization of a scalar probability.
pub fn binary_reparam<T: Scalar, R: Rng + ?Sized>(
    g: &Graph<T>,
    p: Var,
    rng: &mut R,
) -> Result<BinarySample> {
    let pv = g.value(p);
    if !pv.is_scalar() {
        return Err(CoreError::InvalidArgument("binary_reparam expects a scalar".into()));
    }
    let pf = pv.item().to_f64_lossy();
    if !(0.0..=1.0).contains(&pf) {
        return Err(CoreError::InvalidProbability(pf));
    }
    let s = rng.gen::<f64>() < pf;
    binary_reparam_with(g, p, s)
}

/// Binary reparameterization of a given draw `s`.
pub fn binary_reparam_with<T: Scalar>(g: &Graph<T>, p: Var, s: bool) -> Result<BinarySample> {
    let pv = g.value(p);
    let pt = pv.item();
    let pf = pt.to_f64_lossy();
    if !(0.0..=1.0).contains(&pf) {
        return Err(CoreError::InvalidProbability(pf));
    }
    let c = if s { T::one() - pt } else { -pt };
    let c_node = g.constant(Tensor::new(pv.shape().to_vec(), vec![c])?);
    let z = g.add(p, c_node)?;
    Ok(BinarySample {
        z,
        s,
        c: c.to_f64_lossy(),
    })
}

fn check_distribution<T: Scalar>(p: &[T]) -> Result<()> {
    if p.is_empty() {
        return Err(CoreError::InvalidDistribution("empty".into()));
    }
    let mut sum = 0.0f64;
    for &v in p {
        let v = v.to_f64_lossy();
        if !v.is_finite() || v < 0.0 {
            return Err(CoreError::InvalidDistribution(format!("entry {v}")));
        }
        sum += v;
    }
    if (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(CoreError::InvalidDistribution(format!("sums to {sum}")));
    }
    Ok(())
}

/// Draw an index from a categorical distribution.
pub fn sample_multinoulli<T: Scalar, R: Rng + ?Sized>(p: &[T], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut cum = 0.0f64;
    let mut last_nonzero = 0;
    for (i, &v) in p.iter().enumerate() {
        let v = v.to_f64_lossy();
        if v > 0.0 {
            last_nonzero = i;
        }
        cum += v;
        if u < cum {
            return i;
        }
    }
    last_nonzero
}

/// Choose a word from `p` per `strategy`. Greedy ties go to the lowest index.
pub fn sample_token<T: Scalar, R: Rng + ?Sized>(
    p: &[T],
    strategy: SamplingStrategy,
    rng: &mut R,
) -> Result<OneHot> {
    check_distribution(p)?;
    let stochastic = match strategy {
        SamplingStrategy::Greedy => false,
        SamplingStrategy::Stochastic => true,
        SamplingStrategy::Mixed { stochastic_ratio } => {
            if !(0.0..=1.0).contains(&stochastic_ratio) {
                return Err(CoreError::InvalidArgument(format!(
                    "stochastic ratio {stochastic_ratio} outside [0, 1]"
                )));
            }
            rng.gen::<f64>() < stochastic_ratio
        }
    };
    let index = if stochastic {
        sample_multinoulli(p, rng)
    } else {
        argmax(p)
    };
    Ok(OneHot {
        index,
        dim: p.len(),
    })
}

/// Conjugate part `s * (1 - a) + (1 - s) * (-a)` for `a = lambda * p`.
fn conjugate_into<T: Scalar>(lp: &[T], index: usize, out: &mut [T]) {
    for (j, (o, &a)) in out.iter_mut().zip(lp).enumerate() {
        let s = if j == index { T::one() } else { T::zero() };
        *o = s * (T::one() - a) + (T::one() - s) * (-a);
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(CoreError::InvalidArgument(format!("lambda {lambda} must be >= 0")));
    }
    Ok(())
}

/// Categorical reparameterization of one sampled word.
///
/// `p` is a single probability row (`[V]` or `[1, V]`), `s` a dense one-hot
/// vector of the same width.
pub fn crt<T: Scalar>(g: &Graph<T>, p: Var, s: &[T], lambda: f64) -> Result<ReparamOutput> {
    let pv = g.value(p);
    if pv.rows() != 1 {
        return Err(CoreError::InvalidArgument(format!(
            "crt expects one probability row, got shape {:?}",
            pv.shape()
        )));
    }
    if s.len() != pv.cols() {
        return Err(CoreError::DimensionMismatch {
            what: "sample vs distribution",
            left: s.len(),
            right: pv.cols(),
        });
    }
    let hot = OneHot::from_dense(s)?;
    check_distribution(pv.data())?;
    let (z, _) = crt_rows(g, p, &[hot.index], lambda)?;
    Ok(ReparamOutput {
        z,
        token_id: hot.index,
        p,
        lambda,
    })
}

/// Row-wise categorical reparameterization of `p` (`[n, V]`) at the given
/// sampled indices. Returns `z` with the same shape as `p`.
pub fn crt_rows<T: Scalar>(
    g: &Graph<T>,
    p: Var,
    ids: &[usize],
    lambda: f64,
) -> Result<(Var, Vec<usize>)> {
    check_lambda(lambda)?;
    let pv = g.value(p);
    let (rows, v) = (pv.rows(), pv.cols());
    if ids.len() != rows {
        return Err(CoreError::DimensionMismatch {
            what: "samples vs rows",
            left: ids.len(),
            right: rows,
        });
    }
    if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
        return Err(CoreError::DimensionMismatch {
            what: "sample index vs width",
            left: bad,
            right: v,
        });
    }
    let lp = g.scale(p, T::from_f64_lossy(lambda));
    let lpv = g.value(lp);
    let mut c = Tensor::zeros(pv.shape());
    for (r, &id) in ids.iter().enumerate() {
        conjugate_into(lpv.row(r), id, c.row_mut(r));
    }
    // The conjugate is a graph constant, i.e. detached.
    let c = g.constant(c);
    let z = g.add(lp, c)?;
    Ok((z, ids.to_vec()))
}

/// Straight-through Gumbel-softmax sample.
#[derive(Clone, Copy, Debug)]
pub struct GumbelOutput {
    /// Hard one-hot forward value, gradient of the soft sample.
    pub z: Var,
    pub token_id: usize,
    /// `log_softmax(logits)`, the normalized distribution.
    pub log_p: Var,
    /// `softmax((log_p + g) / tau)`.
    pub soft: Var,
}

pub const DEFAULT_TAU: f64 = 1.0;

/// Gumbel noise `-ln(-ln u)` with `u` uniform on the open unit interval.
pub fn gumbel_noise<T: Scalar, R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<T> {
    (0..n)
        .map(|_| {
            let mut u: f64 = rng.gen();
            while u <= 0.0 {
                u = rng.gen();
            }
            T::from_f64_lossy(-(-u.ln()).ln())
        })
        .collect()
}

/// Straight-through Gumbel-softmax over each row of `logits`. Normalizes
/// twice per row: once to get log-probabilities, once for the soft sample.
pub fn gumbel_softmax<T: Scalar, R: Rng + ?Sized>(
    g: &Graph<T>,
    logits: Var,
    tau: f64,
    rng: &mut R,
) -> Result<(GumbelOutput, Vec<usize>)> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(CoreError::InvalidArgument(format!("tau {tau} must be > 0")));
    }
    let log_p = g.log_softmax(logits)?;
    let shape = g.shape(log_p);
    let numel = shape.iter().product();
    let noise = g.constant(Tensor::new(shape.clone(), gumbel_noise(numel, rng))?);
    let perturbed = g.add(log_p, noise)?;
    let tempered = g.scale(perturbed, T::from_f64_lossy(1.0 / tau));
    let soft = g.softmax(tempered)?;
    let sv = g.value(soft);
    let ids: Vec<usize> = (0..sv.rows()).map(|r| sv.argmax_row(r)).collect();
    let mut hard_minus_soft = Tensor::zeros(&shape);
    for (r, &id) in ids.iter().enumerate() {
        for (j, (o, &y)) in hard_minus_soft
            .row_mut(r)
            .iter_mut()
            .zip(sv.row(r))
            .enumerate()
        {
            let hard = if j == id { T::one() } else { T::zero() };
            *o = hard - y;
        }
    }
    let c = g.constant(hard_minus_soft);
    let z = g.add(soft, c)?;
    Ok((
        GumbelOutput {
            z,
            token_id: ids[0],
            log_p,
            soft,
        },
        ids,
    ))
}
