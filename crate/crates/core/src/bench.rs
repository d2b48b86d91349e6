//! Timing of the two categorical reparameterizations on identical logits.

use std::time::{Duration, Instant};

use e2ebt_tensor::{Graph, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::reparam::{crt_rows, gumbel_softmax, sample_multinoulli, DEFAULT_TAU};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub vocab: usize,
    pub seq_len: usize,
    pub batch: usize,
    pub repeats: usize,
    pub lambda: f64,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            vocab: 30000,
            seq_len: 50,
            batch: 60,
            repeats: 5,
            lambda: 1.0,
            seed: 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxCounts {
    pub crt: u64,
    pub gst: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub vocab: usize,
    pub seq_len: usize,
    pub batch: usize,
    pub repeats: usize,
    /// Medians over repeats, seconds per full batch.
    pub crt_seconds: f64,
    pub gst_seconds: f64,
    pub ratio: f64,
    /// Per full batch.
    pub softmax_counts: SoftmaxCounts,
    pub crt_runs: Vec<f64>,
    pub gst_runs: Vec<f64>,
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// CRT on one sequence: normalize, sample each position, reparameterize.
fn crt_sequence(g: &Graph<f32>, logits: e2ebt_tensor::Var, lambda: f64, rng: &mut ChaCha8Rng) -> Result<()> {
    let p = g.softmax(logits)?;
    let pv = g.value(p);
    let ids: Vec<usize> = (0..pv.rows()).map(|r| sample_multinoulli(pv.row(r), rng)).collect();
    crt_rows(g, p, &ids, lambda)?;
    Ok(())
}

/// One timed pass over the batch. Logit copies enter each graph outside
/// the timed region.
fn pass(
    logits: &[Tensor<f32>],
    rng: &mut ChaCha8Rng,
    lambda: f64,
    gumbel: bool,
) -> Result<(Duration, u64)> {
    let mut elapsed = Duration::ZERO;
    let mut softmax = 0;
    for l in logits {
        let g = Graph::new();
        let x = g.var(l.clone());
        let t = Instant::now();
        if gumbel {
            gumbel_softmax(&g, x, DEFAULT_TAU, rng)?;
        } else {
            crt_sequence(&g, x, lambda, rng)?;
        }
        elapsed += t.elapsed();
        softmax += g.softmax_count();
    }
    Ok((elapsed, softmax))
}

/// Single-threaded timings of CRT and GST, alternating method order across
/// repeats.
pub fn bench_reparam(config: &BenchConfig) -> Result<BenchReport> {
    let BenchConfig {
        vocab,
        seq_len,
        batch,
        repeats,
        lambda,
        seed,
    } = *config;
    if vocab == 0 || seq_len == 0 || batch == 0 || repeats == 0 {
        return Err(CoreError::InvalidArgument(
            "bench sizes must all be at least 1".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let logits = (0..batch)
        .map(|_| {
            let data = (0..seq_len * vocab).map(|_| rng.gen_range(-4.0f32..4.0)).collect();
            Tensor::new(vec![seq_len, vocab], data)
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let (mut crt_runs, mut gst_runs) = (Vec::new(), Vec::new());
    let mut counts = SoftmaxCounts { crt: 0, gst: 0 };
    for r in 0..repeats {
        for gumbel in [r % 2 == 1, r % 2 == 0] {
            let (t, n) = pass(&logits, &mut rng, lambda, gumbel)?;
            if gumbel {
                gst_runs.push(t.as_secs_f64());
                counts.gst = n;
            } else {
                crt_runs.push(t.as_secs_f64());
                counts.crt = n;
            }
        }
    }
    let crt_seconds = median(&crt_runs);
    let gst_seconds = median(&gst_runs);
    Ok(BenchReport {
        vocab,
        seq_len,
        batch,
        repeats,
        crt_seconds,
        gst_seconds,
        ratio: gst_seconds / crt_seconds,
        softmax_counts: counts,
        crt_runs,
        gst_runs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_one_vs_two() {
        let r = bench_reparam(&BenchConfig {
            vocab: 7,
            seq_len: 3,
            batch: 4,
            repeats: 3,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(r.softmax_counts, SoftmaxCounts { crt: 12, gst: 24 });
        assert_eq!(r.crt_runs.len(), 3);
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn zero_sizes_rejected() {
        let c = BenchConfig {
            batch: 0,
            ..Default::default()
        };
        assert!(bench_reparam(&c).is_err());
    }
}
