//! Iterative back-translation training and the supervised pre-training
//! stages.

mod adam;
mod bt;
mod cache;
mod feg;
mod metrics;
mod pretrain;
mod sep;
mod state;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

pub use adam::Adam;
pub use bt::{sample_batch, BtTrainer, Prior, RawBatch, Translators};
pub use cache::{fetch_latent, CacheEntry, SyntheticCache};
pub use feg::FEGState;
pub use metrics::{MetricsLog, MetricsRecord};
pub use pretrain::{pretrain_lm, pretrain_nmt, PretrainConfig};
pub use sep::apply_sep;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReparamKind {
    Crt,
    Gumbel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BTConfig {
    pub lambda_x: f64,
    pub lambda_y: f64,
    pub alpha_x: f64,
    pub alpha_y: f64,
    /// Evaluating-generator refresh interval; 0 scores latents with the
    /// learning generator.
    pub feg_interval: u64,
    pub sep: bool,
    pub as_start_ratio: f64,
    pub as_end_ratio: f64,
    /// Length of the stochasticity ramp; `max_iters` when absent.
    pub as_total_iters: Option<u64>,
    pub cache_load_prob: f64,
    pub batch_bilingual: usize,
    /// Monolingual sentences per language.
    pub batch_monolingual: usize,
    pub lr: f64,
    pub warmup_iters: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub max_iters: u64,
    pub seed: u64,
    pub reparam: ReparamKind,
    pub gumbel_tau: f64,
    pub log_every: u64,
}

impl Default for BTConfig {
    fn default() -> Self {
        BTConfig {
            lambda_x: 0.01,
            lambda_y: 0.01,
            alpha_x: 0.0025,
            alpha_y: 0.0025,
            feg_interval: 75,
            sep: false,
            as_start_ratio: 0.0,
            as_end_ratio: 0.5,
            as_total_iters: None,
            cache_load_prob: 0.0,
            batch_bilingual: 12,
            batch_monolingual: 48,
            lr: 0.001,
            warmup_iters: 4000,
            adam_beta1: 0.9,
            adam_beta2: 0.98,
            adam_eps: 1e-8,
            max_iters: 300_000,
            seed: 1,
            reparam: ReparamKind::Crt,
            gumbel_tau: 1.0,
            log_every: 100,
        }
    }
}

impl BTConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CoreError::Config(m));
        for (name, v) in [
            ("lambda_x", self.lambda_x),
            ("lambda_y", self.lambda_y),
            ("alpha_x", self.alpha_x),
            ("alpha_y", self.alpha_y),
            ("lr", self.lr),
            ("adam_eps", self.adam_eps),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        for (name, v) in [
            ("cache_load_prob", self.cache_load_prob),
            ("as_start_ratio", self.as_start_ratio),
            ("as_end_ratio", self.as_end_ratio),
            ("adam_beta1", self.adam_beta1),
            ("adam_beta2", self.adam_beta2),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        if self.batch_bilingual == 0 && self.batch_monolingual == 0 {
            return bad("batch_bilingual and batch_monolingual are both zero".into());
        }
        if !(self.gumbel_tau > 0.0) {
            return bad(format!("gumbel_tau must be > 0, got {}", self.gumbel_tau));
        }
        Ok(())
    }

    /// Length of the sampling-ratio ramp; the whole run unless set.
    pub fn as_total(&self) -> u64 {
        self.as_total_iters.unwrap_or(self.max_iters)
    }
}

/// Stochastic-sampling ratio at `iteration`: linear from the start to the
/// end ratio over the ramp, constant afterwards.
pub fn as_ratio(iteration: u64, config: &BTConfig) -> f64 {
    let total = config.as_total();
    let t = if total == 0 {
        1.0
    } else {
        (iteration as f64 / total as f64).min(1.0)
    };
    config.as_start_ratio + (config.as_end_ratio - config.as_start_ratio) * t
}

/// Linear warmup to `lr` over `warmup` iterations, then `lr * sqrt(warmup /
/// iteration)`.
pub fn lr_schedule(iteration: u64, lr: f64, warmup: u64) -> f64 {
    if warmup == 0 {
        return lr;
    }
    let (it, w) = (iteration as f64, warmup as f64);
    if iteration <= warmup {
        lr * it / w
    } else {
        lr * (w / it).sqrt()
    }
}

/// Independent stream per iteration, so a resumed run draws exactly what an
/// uninterrupted one would.
pub fn step_rng(seed: u64, iteration: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(iteration + 1);
    rng
}
