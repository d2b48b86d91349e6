use e2ebt_tensor::{ParamId, ParamStore, Scalar, Tensor, Var};
use rand::Rng;

use super::{Fwd, ModelDims, TokenInput};
use crate::error::{CoreError, Result};

pub(crate) enum Init {
    Zeros,
    Ones,
    Uniform(f64),
}

/// Look up `name`, or create it with `init` when absent. Existing entries
/// must have the requested shape.
pub(crate) fn param<T: Scalar, R: Rng + ?Sized>(
    store: &mut ParamStore<T>,
    name: &str,
    shape: &[usize],
    init: Init,
    rng: &mut R,
) -> Result<ParamId> {
    if let Some(id) = store.find(name) {
        let have = store.get(id).shape();
        if have != shape {
            return Err(CoreError::Checkpoint(format!(
                "parameter {name} has shape {have:?}, expected {shape:?}"
            )));
        }
        return Ok(id);
    }
    let n: usize = shape.iter().product();
    let data = match init {
        Init::Zeros => vec![T::zero(); n],
        Init::Ones => vec![T::one(); n],
        Init::Uniform(a) => (0..n)
            .map(|_| T::from_f64_lossy(rng.gen_range(-a..=a)))
            .collect(),
    };
    Ok(store.add(name, Tensor::new(shape.to_vec(), data)?))
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub(crate) fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        Ok(Linear {
            w: param(store, &format!("{name}.w"), &[fan_in, fan_out], Init::Uniform(a), rng)?,
            b: param(store, &format!("{name}.b"), &[fan_out], Init::Zeros, rng)?,
        })
    }

    pub fn forward<T: Scalar>(&self, f: &Fwd<'_, T>, x: Var) -> Result<Var> {
        let w = f.g.param(f.params, self.w);
        let b = f.g.param(f.params, self.b);
        let y = f.g.matmul(x, w)?;
        Ok(f.g.add_row(y, b)?)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

pub(crate) const LN_EPS: f64 = 1e-5;

impl LayerNorm {
    pub(crate) fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        d: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(LayerNorm {
            gain: param(store, &format!("{name}.gain"), &[d], Init::Ones, rng)?,
            bias: param(store, &format!("{name}.bias"), &[d], Init::Zeros, rng)?,
        })
    }

    pub fn forward<T: Scalar>(&self, f: &Fwd<'_, T>, x: Var) -> Result<Var> {
        let gain = f.g.param(f.params, self.gain);
        let bias = f.g.param(f.params, self.bias);
        Ok(f.g.layer_norm(x, gain, bias, LN_EPS)?)
    }
}

#[derive(Clone, Debug)]
pub struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
}

impl Attention {
    pub(crate) fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        d: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Attention {
            q: Linear::new(store, &format!("{name}.q"), d, d, rng)?,
            k: Linear::new(store, &format!("{name}.k"), d, d, rng)?,
            v: Linear::new(store, &format!("{name}.v"), d, d, rng)?,
            o: Linear::new(store, &format!("{name}.o"), d, d, rng)?,
        })
    }

    /// Project keys and values of `x` once, for reuse across queries.
    pub fn keys_values<T: Scalar>(&self, f: &Fwd<'_, T>, x: Var) -> Result<(Var, Var)> {
        Ok((self.k.forward(f, x)?, self.v.forward(f, x)?))
    }

    pub fn attend<T: Scalar>(
        &self,
        f: &Fwd<'_, T>,
        x: Var,
        k: Var,
        v: Var,
        heads: usize,
        causal: bool,
    ) -> Result<Var> {
        let q = self.q.forward(f, x)?;
        let a = f.g.attention(q, k, v, heads, causal)?;
        self.o.forward(f, a)
    }

    pub fn forward<T: Scalar>(
        &self,
        f: &Fwd<'_, T>,
        x: Var,
        memory: Var,
        heads: usize,
        causal: bool,
    ) -> Result<Var> {
        let (k, v) = self.keys_values(f, memory)?;
        self.attend(f, x, k, v, heads, causal)
    }
}

#[derive(Clone, Debug)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        d: usize,
        d_ff: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(FeedForward {
            up: Linear::new(store, &format!("{name}.up"), d, d_ff, rng)?,
            down: Linear::new(store, &format!("{name}.down"), d_ff, d, rng)?,
        })
    }

    fn forward<T: Scalar>(&self, f: &Fwd<'_, T>, x: Var) -> Result<Var> {
        let h = self.up.forward(f, x)?;
        let h = f.g.relu(h);
        self.down.forward(f, h)
    }
}

/// Self-attention and feed-forward blocks, each pre-normed with a residual.
/// Causal self-attention turns it into a decoder-only layer.
#[derive(Clone, Debug)]
pub struct EncoderLayer {
    pub ln_attn: LayerNorm,
    pub attn: Attention,
    pub ln_ff: LayerNorm,
    pub ff: FeedForward,
}

impl EncoderLayer {
    pub(crate) fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        dims: &ModelDims,
        rng: &mut R,
    ) -> Result<Self> {
        let d = dims.d_model;
        Ok(EncoderLayer {
            ln_attn: LayerNorm::new(store, &format!("{name}.ln_attn"), d, rng)?,
            attn: Attention::new(store, &format!("{name}.attn"), d, rng)?,
            ln_ff: LayerNorm::new(store, &format!("{name}.ln_ff"), d, rng)?,
            ff: FeedForward::new(store, &format!("{name}.ff"), d, dims.d_ff, rng)?,
        })
    }

    pub fn forward<T: Scalar>(
        &self,
        f: &Fwd<'_, T>,
        x: Var,
        heads: usize,
        causal: bool,
    ) -> Result<Var> {
        let h = self.ln_attn.forward(f, x)?;
        let a = self.attn.forward(f, h, h, heads, causal)?;
        let a = f.drop(a)?;
        let x = f.g.add(x, a)?;
        let h = self.ln_ff.forward(f, x)?;
        let h = self.ff.forward(f, h)?;
        let h = f.drop(h)?;
        Ok(f.g.add(x, h)?)
    }
}

#[derive(Clone, Debug)]
pub struct DecoderLayer {
    pub ln_self: LayerNorm,
    pub self_attn: Attention,
    pub ln_cross: LayerNorm,
    pub cross_attn: Attention,
    pub ln_ff: LayerNorm,
    pub ff: FeedForward,
}

impl DecoderLayer {
    pub(crate) fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        dims: &ModelDims,
        rng: &mut R,
    ) -> Result<Self> {
        let d = dims.d_model;
        Ok(DecoderLayer {
            ln_self: LayerNorm::new(store, &format!("{name}.ln_self"), d, rng)?,
            self_attn: Attention::new(store, &format!("{name}.self_attn"), d, rng)?,
            ln_cross: LayerNorm::new(store, &format!("{name}.ln_cross"), d, rng)?,
            cross_attn: Attention::new(store, &format!("{name}.cross_attn"), d, rng)?,
            ln_ff: LayerNorm::new(store, &format!("{name}.ln_ff"), d, rng)?,
            ff: FeedForward::new(store, &format!("{name}.ff"), d, dims.d_ff, rng)?,
        })
    }

    /// `self_kv` holds keys and values of every visible position, the
    /// current rows last; `cross_kv` is the projected encoder memory.
    pub(crate) fn forward_with<T: Scalar>(
        &self,
        f: &Fwd<'_, T>,
        x: Var,
        h_self: Var,
        self_kv: (Var, Var),
        cross_kv: (Var, Var),
        heads: usize,
    ) -> Result<Var> {
        let a = self
            .self_attn
            .attend(f, h_self, self_kv.0, self_kv.1, heads, true)?;
        let a = f.drop(a)?;
        let x = f.g.add(x, a)?;
        let h = self.ln_cross.forward(f, x)?;
        let c = self
            .cross_attn
            .attend(f, h, cross_kv.0, cross_kv.1, heads, false)?;
        let c = f.drop(c)?;
        let x = f.g.add(x, c)?;
        let h = self.ln_ff.forward(f, x)?;
        let h = self.ff.forward(f, h)?;
        let h = f.drop(h)?;
        Ok(f.g.add(x, h)?)
    }
}

/// Token embedding scaled by `sqrt(d)` plus sinusoidal positions starting at
/// `start`.
pub(crate) fn embed<T: Scalar>(
    f: &Fwd<'_, T>,
    table: ParamId,
    input: TokenInput<'_>,
    start: usize,
    dims: &ModelDims,
) -> Result<Var> {
    let len = input.len(f.g);
    if len == 0 {
        return Err(CoreError::Empty("token input"));
    }
    if start + len > dims.max_positions {
        return Err(CoreError::TooLong {
            len: start + len,
            max: dims.max_positions,
        });
    }
    let e = f.g.param(f.params, table);
    let x = match input {
        TokenInput::Ids(ids) => {
            if let Some(&bad) = ids.iter().find(|&&i| i >= dims.vocab) {
                return Err(CoreError::DimensionMismatch {
                    what: "token id vs vocabulary",
                    left: bad,
                    right: dims.vocab,
                });
            }
            f.g.gather(e, ids)?
        }
        TokenInput::Rows(rows) => {
            let cols = f.g.value(rows).cols();
            if cols != dims.vocab {
                return Err(CoreError::DimensionMismatch {
                    what: "one-hot width vs vocabulary",
                    left: cols,
                    right: dims.vocab,
                });
            }
            f.g.matmul(rows, e)?
        }
    };
    let x = f.g.scale(x, T::from_f64_lossy((dims.d_model as f64).sqrt()));
    let pe = f.g.constant(super::sinusoidal(start, len, dims.d_model));
    let x = f.g.add(x, pe)?;
    f.drop(x)
}

pub(crate) fn embedding_param<T: Scalar, R: Rng + ?Sized>(
    store: &mut ParamStore<T>,
    name: &str,
    dims: &ModelDims,
    rng: &mut R,
) -> Result<ParamId> {
    let a = (3.0 / dims.d_model as f64).sqrt();
    param(store, name, &[dims.vocab, dims.d_model], Init::Uniform(a), rng)
}
