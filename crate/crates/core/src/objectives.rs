//! Loss terms: bilingual cross-entropy, the monolingual evidence lower bound
//! (reconstruction plus KL to a language-model prior) and their sum over
//! both directions.

use e2ebt_tensor::{Graph, ParamStore, Params, Scalar, Var};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::model::{
    lm_distributions, with_eos, DifferentiableSentence, Direction, Fwd, LanguageModel,
    TokenInput, TranslationModel,
};

/// Every component is a per-token mean; `total` is their weighted sum.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub bilingual_st: f64,
    pub bilingual_ts: f64,
    pub recon_tst: f64,
    pub kl_tst: f64,
    pub recon_sts: f64,
    pub kl_sts: f64,
    pub total: f64,
}

impl LossReport {
    pub fn weighted_total(&self, alpha_x: f64, alpha_y: f64) -> f64 {
        self.bilingual_st
            + self.bilingual_ts
            + self.recon_tst
            + alpha_x * self.kl_tst
            + self.recon_sts
            + alpha_y * self.kl_sts
    }

    pub fn is_finite(&self) -> bool {
        [
            self.bilingual_st,
            self.bilingual_ts,
            self.recon_tst,
            self.kl_tst,
            self.recon_sts,
            self.kl_sts,
            self.total,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// A bilingual pair `(source, target)`.
pub type Pair = (Vec<usize>, Vec<usize>);

fn sum_all<T: Scalar>(g: &Graph<T>, terms: &[Var]) -> Result<Option<Var>> {
    let mut it = terms.iter();
    let Some(&first) = it.next() else {
        return Ok(None);
    };
    let mut acc = first;
    for &t in it {
        acc = g.add(acc, t)?;
    }
    Ok(Some(acc))
}

fn per_token<T: Scalar>(g: &Graph<T>, sum: Var, tokens: usize) -> Var {
    g.scale(sum, T::from_f64_lossy(1.0 / tokens as f64))
}

/// Teacher-forced cross-entropy of `model` on `pairs`, read in the model's
/// direction, normalized by the number of predicted tokens (EOS included).
pub fn bilingual_loss<T: Scalar>(
    f: &Fwd<'_, T>,
    model: &TranslationModel,
    pairs: &[Pair],
) -> Result<Var> {
    if pairs.is_empty() {
        return Err(CoreError::Empty("bilingual batch"));
    }
    let mut terms = Vec::with_capacity(pairs.len());
    let mut tokens = 0;
    for (s, t) in pairs {
        let (src, tgt) = match model.direction {
            Direction::St => (s, t),
            Direction::Ts => (t, s),
        };
        let input = with_eos(src);
        terms.push(model.nll(f, TokenInput::Ids(&input), tgt)?);
        tokens += tgt.len() + 1;
    }
    let sum = sum_all(f.g, &terms)?.expect("nonempty");
    Ok(per_token(f.g, sum, tokens))
}

/// Summed negative log-likelihood of the monolingual `target` given the
/// latent one-hot rows; gradient reaches the generator and, through the
/// rows, the inference model.
pub fn reconstruction_loss<T: Scalar>(
    f: &Fwd<'_, T>,
    generator: &TranslationModel,
    latent: &DifferentiableSentence,
    target: &[usize],
) -> Result<Var> {
    let rows = latent.encoder_rows(f.g)?;
    generator.nll(f, TokenInput::Rows(rows), target)
}

/// `sum_t KL(q_t || prior_t)` with the prior read by a frozen language model
/// from the latent ids.
pub fn kl_to_prior<T: Scalar>(
    prior: &Fwd<'_, T>,
    lm: &LanguageModel,
    latent: &DifferentiableSentence,
) -> Result<Var> {
    let q = latent.q_rows(prior.g)?;
    let p = lm_distributions(prior, lm, &latent.token_ids)?;
    kl_rows(prior.g, q, p)
}

/// Summed row-wise KL between two `[T, V]` distribution matrices.
pub fn kl_rows<T: Scalar>(g: &Graph<T>, q: Var, prior: Var) -> Result<Var> {
    let (qs, ps) = (g.shape(q), g.shape(prior));
    if qs != ps {
        return Err(CoreError::DimensionMismatch {
            what: "posterior vs prior size",
            left: qs.iter().product(),
            right: ps.iter().product(),
        });
    }
    Ok(g.kl_categorical(q, prior)?)
}

/// Where a latent sentence came from.
#[derive(Clone, Debug)]
pub enum LatentSource {
    /// Generated this step; carries gradient.
    Fresh(DifferentiableSentence),
    /// Loaded from the synthetic cache: words only, no gradient.
    Cached(Vec<usize>),
}

impl LatentSource {
    /// Latent words, EOS excluded.
    pub fn words(&self) -> &[usize] {
        match self {
            LatentSource::Fresh(l) => l.words(),
            LatentSource::Cached(w) => w,
        }
    }
}

#[derive(Clone, Debug)]
pub struct MonoExample {
    pub sentence: Vec<usize>,
    pub latent: LatentSource,
}

/// One mini-batch with latents already inferred. `mono_src` feeds the
/// source-target-source process, `mono_tgt` the target-source-target one.
#[derive(Clone, Debug, Default)]
pub struct CompositeBatch {
    pub bilingual: Vec<Pair>,
    pub mono_src: Vec<MonoExample>,
    pub mono_tgt: Vec<MonoExample>,
}

/// Parameters the composite objective reads.
pub struct System<'a, T: Scalar> {
    pub store: &'a ParamStore<T>,
    pub st: &'a TranslationModel,
    pub ts: &'a TranslationModel,
    /// Frozen evaluating generators; `None` scores latents with the learning
    /// generators directly.
    pub evaluating: Option<&'a ParamStore<T>>,
    pub lm_src: (&'a ParamStore<T>, &'a LanguageModel),
    pub lm_tgt: (&'a ParamStore<T>, &'a LanguageModel),
}

#[derive(Clone, Copy, Debug)]
pub struct ObjectiveWeights {
    pub alpha_x: f64,
    pub alpha_y: f64,
    pub dropout: f64,
}

struct Process<'a> {
    inference: &'a TranslationModel,
    generator: &'a TranslationModel,
    alpha: f64,
}

/// Returns `(recon, kl)` per-token scalars for one monolingual process.
fn elbo_terms<T: Scalar>(
    g: &Graph<T>,
    sys: &System<'_, T>,
    proc_: &Process<'_>,
    lm: (&ParamStore<T>, &LanguageModel),
    examples: &[MonoExample],
    dropout: f64,
    seed: u64,
) -> Result<(Var, Var)> {
    let learn = Fwd::train(g, Params::trainable(sys.store), dropout, seed);
    let infer = Fwd::eval(g, Params::trainable(sys.store));
    let prior = Fwd::eval(g, Params::frozen(lm.0));
    let evaluating = sys.evaluating.map(|s| Fwd::eval(g, Params::frozen(s)));
    let mut recon = Vec::new();
    let mut kl = Vec::new();
    let mut tokens = 0;
    for ex in examples {
        let y = &ex.sentence;
        tokens += y.len() + 1;
        let (q, latent_ids, fresh) = match &ex.latent {
            LatentSource::Fresh(l) => {
                let r = match &evaluating {
                    Some(eval) => {
                        let ids = with_eos(l.words());
                        let own = proc_.generator.nll(&learn, TokenInput::Ids(&ids), y)?;
                        if l.lambda > 0.0 {
                            let e = reconstruction_loss(eval, proc_.generator, l, y)?;
                            let d = g.detach(e);
                            let zero = g.sub(e, d)?;
                            g.add(own, zero)?
                        } else {
                            own
                        }
                    }
                    None => reconstruction_loss(&learn, proc_.generator, l, y)?,
                };
                recon.push(r);
                (l.q_rows(g)?, l.token_ids.clone(), true)
            }
            LatentSource::Cached(words) => {
                let ids = with_eos(words);
                recon.push(proc_.generator.nll(&learn, TokenInput::Ids(&ids), y)?);
                let src = with_eos(y);
                let logits = proc_
                    .inference
                    .teacher_forced(&infer, TokenInput::Ids(&src), words)?;
                (g.softmax(logits)?, ids, false)
            }
        };
        let q = if proc_.alpha > 0.0 && fresh { q } else { g.detach(q) };
        let p = lm_distributions(&prior, lm.1, &latent_ids)?;
        kl.push(kl_rows(g, q, p)?);
    }
    let recon = sum_all(g, &recon)?.expect("nonempty");
    let kl = sum_all(g, &kl)?.expect("nonempty");
    Ok((per_token(g, recon, tokens), per_token(g, kl, tokens)))
}

/// Both directions' objectives summed into one scalar for a single
/// optimizer step, plus the per-component report.
pub fn composite_losses<T: Scalar>(
    g: &Graph<T>,
    sys: &System<'_, T>,
    batch: &CompositeBatch,
    weights: ObjectiveWeights,
    seed: u64,
) -> Result<(Var, LossReport)> {
    if batch.bilingual.is_empty() && batch.mono_src.is_empty() && batch.mono_tgt.is_empty() {
        return Err(CoreError::Empty("batch"));
    }
    let item = |v: Var| g.value(v).item().to_f64_lossy();
    let mut report = LossReport::default();
    let mut terms = Vec::new();
    if !batch.bilingual.is_empty() {
        let f = Fwd::train(g, Params::trainable(sys.store), weights.dropout, seed ^ 0x51);
        let st = bilingual_loss(&f, sys.st, &batch.bilingual)?;
        let ts = bilingual_loss(&f, sys.ts, &batch.bilingual)?;
        report.bilingual_st = item(st);
        report.bilingual_ts = item(ts);
        terms.extend([st, ts]);
    }
    let processes = [
        (
            &batch.mono_tgt,
            Process {
                inference: sys.ts,
                generator: sys.st,
                alpha: weights.alpha_x,
            },
            sys.lm_src,
            0x7u64,
            true,
        ),
        (
            &batch.mono_src,
            Process {
                inference: sys.st,
                generator: sys.ts,
                alpha: weights.alpha_y,
            },
            sys.lm_tgt,
            0x5u64,
            false,
        ),
    ];
    for (examples, proc_, lm, salt, is_tst) in processes {
        if examples.is_empty() {
            continue;
        }
        let (recon, kl) = elbo_terms(g, sys, &proc_, lm, examples, weights.dropout, seed ^ salt)?;
        if is_tst {
            report.recon_tst = item(recon);
            report.kl_tst = item(kl);
        } else {
            report.recon_sts = item(recon);
            report.kl_sts = item(kl);
        }
        terms.push(recon);
        if proc_.alpha > 0.0 {
            terms.push(g.scale(kl, T::from_f64_lossy(proc_.alpha)));
        }
    }
    report.total = report.weighted_total(weights.alpha_x, weights.alpha_y);
    let total = sum_all(g, &terms)?.expect("nonempty batch");
    Ok((total, report))
}
