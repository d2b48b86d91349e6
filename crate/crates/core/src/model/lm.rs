use std::fmt;

use e2ebt_tensor::{ParamId, ParamStore, Scalar, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{embed, embedding_param, EncoderLayer, LayerNorm, Linear};
use super::{with_bos, with_eos, Fwd, ModelDims, TokenInput};
use crate::error::{CoreError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Src,
    Tgt,
}

impl Side {
    pub fn name(self) -> &'static str {
        match self {
            Side::Src => "src",
            Side::Tgt => "tgt",
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Side {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "src" => Ok(Side::Src),
            "tgt" => Ok(Side::Tgt),
            other => Err(CoreError::InvalidArgument(format!(
                "side must be src or tgt, got {other}"
            ))),
        }
    }
}

/// Decoder-only transformer over one language.
#[derive(Clone, Debug)]
pub struct LanguageModel {
    pub side: Side,
    pub dims: ModelDims,
    pub embed: ParamId,
    pub layers: Vec<EncoderLayer>,
    pub norm: LayerNorm,
    pub out: Linear,
}

impl LanguageModel {
    /// Parameters live under `"lm.{side}.*"`; the layer count is
    /// `dims.dec_layers`.
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        side: Side,
        dims: ModelDims,
        rng: &mut R,
    ) -> Result<Self> {
        dims.validate()?;
        let p = format!("lm.{side}");
        let embed = embedding_param(store, &format!("{p}.embed"), &dims, rng)?;
        let layers = (0..dims.dec_layers)
            .map(|i| EncoderLayer::new(store, &format!("{p}.{i}"), &dims, rng))
            .collect::<Result<Vec<_>>>()?;
        let norm = LayerNorm::new(store, &format!("{p}.norm"), dims.d_model, rng)?;
        let out = Linear::new(store, &format!("{p}.out"), dims.d_model, dims.vocab, rng)?;
        Ok(LanguageModel {
            side,
            dims,
            embed,
            layers,
            norm,
            out,
        })
    }

    /// Next-token logits `[L, V]` for each prefix of `input`.
    pub fn logits<T: Scalar>(&self, f: &Fwd<'_, T>, input: TokenInput<'_>) -> Result<Var> {
        let mut x = embed(f, self.embed, input, 0, &self.dims)?;
        for layer in &self.layers {
            x = layer.forward(f, x, self.dims.heads, true)?;
        }
        let x = self.norm.forward(f, x)?;
        self.out.forward(f, x)
    }

    /// Teacher-forced next-token distributions, one row per input position.
    /// Feed `BOS + x[..T-1]` to get the prior for each of the `T` tokens of
    /// `x`.
    pub fn distributions<T: Scalar>(
        &self,
        f: &Fwd<'_, T>,
        input: TokenInput<'_>,
    ) -> Result<Var> {
        let logits = self.logits(f, input)?;
        Ok(f.g.softmax(logits)?)
    }

    /// Summed negative log-likelihood of `sentence + EOS`.
    pub fn nll<T: Scalar>(&self, f: &Fwd<'_, T>, sentence: &[usize]) -> Result<Var> {
        let input = with_bos(sentence);
        let logits = self.logits(f, TokenInput::Ids(&input))?;
        Ok(f.g.cross_entropy(logits, &with_eos(sentence))?)
    }
}

/// Prior rows for a latent sentence given as ids (EOS included when the
/// latent ended): the language model reads `BOS + latent[..T-1]`.
pub fn lm_distributions<T: Scalar>(
    f: &Fwd<'_, T>,
    lm: &LanguageModel,
    latent_ids: &[usize],
) -> Result<Var> {
    if latent_ids.is_empty() {
        return Err(CoreError::Empty("latent sentence"));
    }
    let input = with_bos(&latent_ids[..latent_ids.len() - 1]);
    lm.distributions(f, TokenInput::Ids(&input))
}
