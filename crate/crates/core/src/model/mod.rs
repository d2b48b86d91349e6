//! Tiny pre-norm transformers: translation models, language models, latent
//! inference and beam search.

mod beam;
mod latent;
mod layers;
mod lm;
mod translation;

use std::cell::RefCell;

use e2ebt_tensor::{Graph, Params, Scalar, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

pub use beam::{beam_search, greedy_decode, score_hypothesis, Hypothesis, ModelScorer, StepScorer};
pub use latent::{infer_latent, latent_max_len, DifferentiableSentence, LatentReparam};
pub use layers::{Attention, DecoderLayer, EncoderLayer, LayerNorm, Linear};
pub use lm::{lm_distributions, LanguageModel, Side};
pub use translation::{DecoderState, Direction, TranslationModel, SHARED_EMBEDDING};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelDims {
    pub vocab: usize,
    pub d_model: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    /// Longest sequence a model can embed, BOS and EOS included.
    pub max_positions: usize,
    pub dropout: f64,
}

impl Default for ModelDims {
    fn default() -> Self {
        ModelDims {
            vocab: 0,
            d_model: 64,
            heads: 4,
            d_ff: 128,
            enc_layers: 2,
            dec_layers: 2,
            max_positions: 128,
            dropout: 0.1,
        }
    }
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CoreError::Config(m));
        if self.vocab < 5 {
            return bad(format!("vocab size {} below 5", self.vocab));
        }
        if self.d_model == 0 || self.heads == 0 || self.d_model % self.heads != 0 {
            return bad(format!(
                "width {} must be a positive multiple of {} heads",
                self.d_model, self.heads
            ));
        }
        if self.d_ff == 0 || self.max_positions < 2 {
            return bad("d_ff and max_positions must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }
}

/// Tokens fed to a model: plain ids, or a `[L, V]` matrix of (one-hot) rows
/// embedded by matrix product so gradient reaches the rows.
#[derive(Clone, Copy, Debug)]
pub enum TokenInput<'a> {
    Ids(&'a [usize]),
    Rows(Var),
}

impl TokenInput<'_> {
    pub fn len<T: Scalar>(&self, g: &Graph<T>) -> usize {
        match self {
            TokenInput::Ids(ids) => ids.len(),
            TokenInput::Rows(v) => g.value(*v).rows(),
        }
    }
}

/// One forward pass: which graph, which parameters (trainable or frozen) and
/// the dropout rate with its own mask stream.
pub struct Fwd<'a, T: Scalar> {
    pub g: &'a Graph<T>,
    pub params: Params<'a, T>,
    pub dropout: f64,
    rng: RefCell<ChaCha8Rng>,
}

impl<'a, T: Scalar> Fwd<'a, T> {
    /// Deterministic pass, no dropout.
    pub fn eval(g: &'a Graph<T>, params: Params<'a, T>) -> Self {
        Fwd {
            g,
            params,
            dropout: 0.0,
            rng: RefCell::new(ChaCha8Rng::seed_from_u64(0)),
        }
    }

    pub fn train(g: &'a Graph<T>, params: Params<'a, T>, dropout: f64, seed: u64) -> Self {
        Fwd {
            g,
            params,
            dropout,
            rng: RefCell::new(ChaCha8Rng::seed_from_u64(seed)),
        }
    }

    pub(crate) fn drop(&self, x: Var) -> Result<Var> {
        Ok(self.g.dropout(x, self.dropout, &mut *self.rng.borrow_mut())?)
    }
}

/// Fixed sinusoidal position table for positions `start..start + len`.
pub fn sinusoidal<T: Scalar>(start: usize, len: usize, d: usize) -> Tensor<T> {
    let mut data = Vec::with_capacity(len * d);
    for pos in start..start + len {
        for i in 0..d {
            let pair = (i / 2) as f64;
            let angle = pos as f64 / 10000f64.powf(2.0 * pair / d as f64);
            let v = if i % 2 == 0 { angle.sin() } else { angle.cos() };
            data.push(T::from_f64_lossy(v));
        }
    }
    Tensor::new(vec![len, d], data).expect("table shape")
}

/// `input + EOS`.
pub fn with_eos(ids: &[usize]) -> Vec<usize> {
    let mut v = ids.to_vec();
    v.push(crate::vocab::EOS);
    v
}

/// `BOS + input`.
pub fn with_bos(ids: &[usize]) -> Vec<usize> {
    let mut v = Vec::with_capacity(ids.len() + 1);
    v.push(crate::vocab::BOS);
    v.extend_from_slice(ids);
    v
}
