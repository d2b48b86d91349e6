use e2ebt_tensor::{Graph, Scalar, Tensor, Var};
use rand::Rng;

use super::{with_eos, Fwd, TokenInput, TranslationModel};
use crate::error::{CoreError, Result};
use crate::reparam::{crt_rows, gumbel_softmax, sample_token, SamplingStrategy};
use crate::vocab::{BOS, EOS};

/// Longest latent sentence inferred for an input of `src_len` tokens.
pub fn latent_max_len(src_len: usize) -> usize {
    (src_len + 10).min(64)
}

/// How each latent word is made differentiable.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LatentReparam {
    Crt,
    /// Straight-through Gumbel-softmax; picks its own word by the perturbed
    /// argmax, so the sampling strategy is ignored.
    Gumbel { tau: f64 },
}

/// A free-running translation whose words carry gradient back into the
/// model that produced them.
#[derive(Clone, Debug)]
pub struct DifferentiableSentence {
    /// One `[1, V]` row per step, forward value one-hot.
    pub z: Vec<Var>,
    pub token_ids: Vec<usize>,
    /// Posterior `[1, V]` row per step.
    pub q: Vec<Var>,
    /// Whether the last token is EOS (otherwise the length cap was hit).
    pub ended: bool,
    pub lambda: f64,
}

impl DifferentiableSentence {
    /// Steps taken, EOS included.
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    /// Words without the closing EOS.
    pub fn words(&self) -> &[usize] {
        if self.ended {
            &self.token_ids[..self.token_ids.len() - 1]
        } else {
            &self.token_ids
        }
    }

    /// `[T, V]` one-hot rows ready for an encoder: the latent words and EOS,
    /// appending a constant EOS row when the cap was hit.
    pub fn encoder_rows<T: Scalar>(&self, g: &Graph<T>) -> Result<Var> {
        let mut rows = self.z.clone();
        if !self.ended {
            let v = g.value(self.z[0]).cols();
            rows.push(g.constant(Tensor::one_hot(&[EOS], v)?));
        }
        Ok(g.concat_rows(&rows)?)
    }

    /// Posterior rows `[T, V]`.
    pub fn q_rows<T: Scalar>(&self, g: &Graph<T>) -> Result<Var> {
        Ok(g.concat_rows(&self.q)?)
    }
}

/// Decode `input` free-running with `model`, reparameterizing every chosen
/// word and feeding the differentiable word back as the next input.
#[allow(clippy::too_many_arguments)]
pub fn infer_latent<T: Scalar, R: Rng + ?Sized>(
    f: &Fwd<'_, T>,
    model: &TranslationModel,
    input: &[usize],
    strategy: SamplingStrategy,
    lambda: f64,
    max_len: usize,
    reparam: LatentReparam,
    rng: &mut R,
) -> Result<DifferentiableSentence> {
    if max_len == 0 {
        return Err(CoreError::InvalidArgument("max_len must be at least 1".into()));
    }
    let g = f.g;
    let src = with_eos(input);
    let memory = model.encode(f, TokenInput::Ids(&src))?;
    let state = model.start(f, memory)?;
    let (mut state, mut logits) = model.step(f, &state, TokenInput::Ids(&[BOS]))?;
    let mut out = DifferentiableSentence {
        z: Vec::new(),
        token_ids: Vec::new(),
        q: Vec::new(),
        ended: false,
        lambda,
    };
    loop {
        let (z, id, q) = match reparam {
            LatentReparam::Crt => {
                let p = g.softmax(logits)?;
                let s = sample_token(g.value(p).data(), strategy, rng)?;
                let (z, _) = crt_rows(g, p, &[s.index], lambda)?;
                (z, s.index, p)
            }
            LatentReparam::Gumbel { tau } => {
                let (o, _) = gumbel_softmax(g, logits, tau, rng)?;
                (o.z, o.token_id, g.exp(o.log_p))
            }
        };
        out.z.push(z);
        out.token_ids.push(id);
        out.q.push(q);
        if id == EOS {
            out.ended = true;
            break;
        }
        if out.token_ids.len() == max_len {
            break;
        }
        let (next, l) = model.step(f, &state, TokenInput::Rows(z))?;
        state = next;
        logits = l;
    }
    Ok(out)
}
