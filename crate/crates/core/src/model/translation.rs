use std::fmt;
use std::rc::Rc;

use e2ebt_tensor::{ParamId, ParamStore, Scalar, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{embed, embedding_param, DecoderLayer, EncoderLayer, LayerNorm, Linear};
use super::{with_bos, with_eos, Fwd, ModelDims, TokenInput};
use crate::error::{CoreError, Result};
use crate::vocab::BOS;

/// Embedding name used once both directions share one table.
pub const SHARED_EMBEDDING: &str = "shared.embed";

/// Translation direction: `St` is source to target, `Ts` the reverse.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    St,
    Ts,
}

impl Direction {
    pub fn prefix(self) -> &'static str {
        match self {
            Direction::St => "st",
            Direction::Ts => "ts",
        }
    }

    pub fn reverse(self) -> Self {
        match self {
            Direction::St => Direction::Ts,
            Direction::Ts => Direction::St,
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.prefix())
    }
}

impl std::str::FromStr for Direction {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "st" => Ok(Direction::St),
            "ts" => Ok(Direction::Ts),
            other => Err(CoreError::InvalidArgument(format!(
                "direction must be st or ts, got {other}"
            ))),
        }
    }
}

/// Encoder-decoder with one embedding table for both sides of a joint
/// vocabulary and a separate output projection.
#[derive(Clone, Debug)]
pub struct TranslationModel {
    pub direction: Direction,
    pub dims: ModelDims,
    pub embed: ParamId,
    pub encoder: Vec<EncoderLayer>,
    pub enc_norm: LayerNorm,
    pub decoder: Vec<DecoderLayer>,
    pub dec_norm: LayerNorm,
    pub out: Linear,
}

/// Incremental decoding state: keys and values of every fed position per
/// layer, plus the projected encoder memory.
#[derive(Clone, Debug)]
pub struct DecoderState {
    pub pos: usize,
    self_kv: Vec<Option<(Var, Var)>>,
    cross_kv: Rc<Vec<(Var, Var)>>,
}

impl TranslationModel {
    /// Create parameters under `"{direction}.*"`, reusing any that already
    /// exist in `store` under the same names.
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        direction: Direction,
        dims: ModelDims,
        rng: &mut R,
    ) -> Result<Self> {
        dims.validate()?;
        let p = direction.prefix();
        let embed = match store.find(SHARED_EMBEDDING) {
            Some(id) => id,
            None => embedding_param(store, &format!("{p}.embed"), &dims, rng)?,
        };
        let encoder = (0..dims.enc_layers)
            .map(|i| EncoderLayer::new(store, &format!("{p}.enc.{i}"), &dims, rng))
            .collect::<Result<Vec<_>>>()?;
        let enc_norm = LayerNorm::new(store, &format!("{p}.enc.norm"), dims.d_model, rng)?;
        let decoder = (0..dims.dec_layers)
            .map(|i| DecoderLayer::new(store, &format!("{p}.dec.{i}"), &dims, rng))
            .collect::<Result<Vec<_>>>()?;
        let dec_norm = LayerNorm::new(store, &format!("{p}.dec.norm"), dims.d_model, rng)?;
        let out = Linear::new(store, &format!("{p}.out"), dims.d_model, dims.vocab, rng)?;
        Ok(TranslationModel {
            direction,
            dims,
            embed,
            encoder,
            enc_norm,
            decoder,
            dec_norm,
            out,
        })
    }

    /// Every parameter id this model reads.
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.embed];
        let lin = |l: &Linear, ids: &mut Vec<ParamId>| ids.extend([l.w, l.b]);
        let ln = |l: &LayerNorm, ids: &mut Vec<ParamId>| ids.extend([l.gain, l.bias]);
        let att = |a: &super::Attention, ids: &mut Vec<ParamId>| {
            for l in [&a.q, &a.k, &a.v, &a.o] {
                lin(l, ids);
            }
        };
        for l in &self.encoder {
            ln(&l.ln_attn, &mut ids);
            att(&l.attn, &mut ids);
            ln(&l.ln_ff, &mut ids);
            lin(&l.ff.up, &mut ids);
            lin(&l.ff.down, &mut ids);
        }
        ln(&self.enc_norm, &mut ids);
        for l in &self.decoder {
            ln(&l.ln_self, &mut ids);
            att(&l.self_attn, &mut ids);
            ln(&l.ln_cross, &mut ids);
            att(&l.cross_attn, &mut ids);
            ln(&l.ln_ff, &mut ids);
            lin(&l.ff.up, &mut ids);
            lin(&l.ff.down, &mut ids);
        }
        ln(&self.dec_norm, &mut ids);
        lin(&self.out, &mut ids);
        ids
    }

    /// Memory states `[L, d]` for an input sentence (EOS included by the
    /// caller).
    pub fn encode<T: Scalar>(&self, f: &Fwd<'_, T>, src: TokenInput<'_>) -> Result<Var> {
        let mut x = embed(f, self.embed, src, 0, &self.dims)?;
        for layer in &self.encoder {
            x = layer.forward(f, x, self.dims.heads, false)?;
        }
        self.enc_norm.forward(f, x)
    }

    fn cross_kv<T: Scalar>(&self, f: &Fwd<'_, T>, memory: Var) -> Result<Vec<(Var, Var)>> {
        self.decoder
            .iter()
            .map(|l| l.cross_attn.keys_values(f, memory))
            .collect()
    }

    /// Causal decoder over a whole prefix: logits `[L, V]`, row `t`
    /// predicting position `t + 1`.
    pub fn decode<T: Scalar>(
        &self,
        f: &Fwd<'_, T>,
        memory: Var,
        prefix: TokenInput<'_>,
    ) -> Result<Var> {
        let cross = self.cross_kv(f, memory)?;
        let mut x = embed(f, self.embed, prefix, 0, &self.dims)?;
        for (layer, &ckv) in self.decoder.iter().zip(&cross) {
            let h = layer.ln_self.forward(f, x)?;
            let kv = layer.self_attn.keys_values(f, h)?;
            x = layer.forward_with(f, x, h, kv, ckv, self.dims.heads)?;
        }
        let x = self.dec_norm.forward(f, x)?;
        self.out.forward(f, x)
    }

    /// Logits `[1, V]` for the position after `prefix`, which must start with
    /// BOS.
    pub fn decode_step<T: Scalar>(
        &self,
        f: &Fwd<'_, T>,
        memory: Var,
        prefix: TokenInput<'_>,
    ) -> Result<Var> {
        let starts_with_bos = match prefix {
            TokenInput::Ids(ids) => ids.first() == Some(&BOS),
            TokenInput::Rows(r) => {
                let v = f.g.value(r);
                v.rows() > 0 && v.row(0)[BOS] == T::one()
            }
        };
        if !starts_with_bos {
            return Err(CoreError::InvalidArgument("prefix must start with BOS".into()));
        }
        let logits = self.decode(f, memory, prefix)?;
        let rows = f.g.value(logits).rows();
        Ok(f.g.slice_rows(logits, rows - 1, 1)?)
    }

    pub fn start<T: Scalar>(&self, f: &Fwd<'_, T>, memory: Var) -> Result<DecoderState> {
        Ok(DecoderState {
            pos: 0,
            self_kv: vec![None; self.decoder.len()],
            cross_kv: Rc::new(self.cross_kv(f, memory)?),
        })
    }

    /// Feed one token (id or `[1, V]` row) and return logits `[1, V]` for the
    /// next position. Equivalent to the last row of [`decode`](Self::decode)
    /// over the whole prefix.
    pub fn step<T: Scalar>(
        &self,
        f: &Fwd<'_, T>,
        state: &DecoderState,
        token: TokenInput<'_>,
    ) -> Result<(DecoderState, Var)> {
        if token.len(f.g) != 1 {
            return Err(CoreError::InvalidArgument("step feeds exactly one token".into()));
        }
        let mut x = embed(f, self.embed, token, state.pos, &self.dims)?;
        let mut next = Vec::with_capacity(self.decoder.len());
        for ((layer, past), &ckv) in self
            .decoder
            .iter()
            .zip(&state.self_kv)
            .zip(state.cross_kv.iter())
        {
            let h = layer.ln_self.forward(f, x)?;
            let (k, v) = layer.self_attn.keys_values(f, h)?;
            let kv = match past {
                Some((pk, pv)) => (f.g.concat_rows(&[*pk, k])?, f.g.concat_rows(&[*pv, v])?),
                None => (k, v),
            };
            x = layer.forward_with(f, x, h, kv, ckv, self.dims.heads)?;
            next.push(Some(kv));
        }
        let x = self.dec_norm.forward(f, x)?;
        let logits = self.out.forward(f, x)?;
        Ok((
            DecoderState {
                pos: state.pos + 1,
                self_kv: next,
                cross_kv: Rc::clone(&state.cross_kv),
            },
            logits,
        ))
    }

    /// Teacher-forced logits for `BOS + target`, one row per target token
    /// plus EOS.
    pub fn teacher_forced<T: Scalar>(
        &self,
        f: &Fwd<'_, T>,
        src: TokenInput<'_>,
        target: &[usize],
    ) -> Result<Var> {
        let memory = self.encode(f, src)?;
        let prefix = with_bos(target);
        self.decode(f, memory, TokenInput::Ids(&prefix))
    }

    /// Summed negative log-likelihood of `target + EOS` given `src`.
    pub fn nll<T: Scalar>(
        &self,
        f: &Fwd<'_, T>,
        src: TokenInput<'_>,
        target: &[usize],
    ) -> Result<Var> {
        let logits = self.teacher_forced(f, src, target)?;
        Ok(f.g.cross_entropy(logits, &with_eos(target))?)
    }
}
