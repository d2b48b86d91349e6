use std::cmp::Ordering;

use e2ebt_tensor::{argmax, Graph, ParamStore, Params, Scalar};

use super::{latent_max_len, with_eos, DecoderState, Fwd, TokenInput, TranslationModel};
use crate::error::{CoreError, Result};
use crate::vocab::{BOS, EOS};

/// Autoregressive next-token log-probabilities.
pub trait StepScorer {
    type State: Clone;

    /// State after BOS, and log-probabilities of the first token.
    fn start(&mut self) -> Result<(Self::State, Vec<f64>)>;

    /// Feed `token`; return the new state and next-token log-probabilities.
    fn feed(&mut self, state: &Self::State, token: usize) -> Result<(Self::State, Vec<f64>)>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    /// Emitted words, EOS excluded.
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    pub finished: bool,
}

impl Hypothesis {
    /// Length-normalized log-probability; EOS counts toward the length.
    pub fn score(&self) -> f64 {
        let len = self.tokens.len() + usize::from(self.finished);
        self.log_prob / len.max(1) as f64
    }
}

fn by_score(a: &Hypothesis, b: &Hypothesis) -> Ordering {
    b.score().partial_cmp(&a.score()).unwrap_or(Ordering::Equal)
}

/// Log-probability of a given continuation under `scorer`.
pub fn score_hypothesis<S: StepScorer>(
    scorer: &mut S,
    tokens: &[usize],
    finished: bool,
) -> Result<Hypothesis> {
    let (mut state, mut lp) = scorer.start()?;
    let mut total = 0.0;
    for (i, &t) in tokens.iter().enumerate() {
        total += lp[t];
        if i + 1 < tokens.len() || finished {
            (state, lp) = scorer.feed(&state, t)?;
        }
    }
    if finished {
        total += lp[EOS];
    }
    Ok(Hypothesis {
        tokens: tokens.to_vec(),
        log_prob: total,
        finished,
    })
}

/// Most likely token at every step, ties to the lowest id.
pub fn greedy_decode<S: StepScorer>(scorer: &mut S, max_len: usize) -> Result<Hypothesis> {
    let (mut state, mut lp) = scorer.start()?;
    let mut h = Hypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
        finished: false,
    };
    for step in 0..max_len {
        let t = argmax(&lp);
        h.log_prob += lp[t];
        if t == EOS {
            h.finished = true;
            break;
        }
        h.tokens.push(t);
        if step + 1 < max_len {
            (state, lp) = scorer.feed(&state, t)?;
        }
    }
    Ok(h)
}

struct Live<S> {
    hyp: Hypothesis,
    state: S,
    next: Vec<f64>,
}

/// Beam search over at most `max_len` emitted tokens (EOS included).
///
/// Each step keeps the `width` best extensions by cumulative log-probability;
/// extensions ending in EOS leave the beam as finished. The answer is the
/// best length-normalized hypothesis among the finished ones, those cut at
/// `max_len`, and the greedy decode.
pub fn beam_search<S: StepScorer>(
    scorer: &mut S,
    width: usize,
    max_len: usize,
) -> Result<Hypothesis> {
    if width == 0 {
        return Err(CoreError::InvalidArgument("beam width must be at least 1".into()));
    }
    let mut done = vec![greedy_decode(scorer, max_len)?];
    if max_len == 0 {
        return Ok(done.remove(0));
    }
    let (state, next) = scorer.start()?;
    let mut live = vec![Live {
        hyp: Hypothesis {
            tokens: Vec::new(),
            log_prob: 0.0,
            finished: false,
        },
        state,
        next,
    }];
    for step in 0..max_len {
        let mut cands: Vec<(usize, usize, f64)> = Vec::new();
        for (i, l) in live.iter().enumerate() {
            for (t, &lp) in l.next.iter().enumerate() {
                cands.push((i, t, l.hyp.log_prob + lp));
            }
        }
        // Stable sort keeps hypothesis then token order among ties.
        cands.sort_by(|a, b| b.2.partial_cmp(&a.2).unwrap_or(Ordering::Equal));
        cands.truncate(width);
        let mut next_live = Vec::new();
        for (i, t, lp) in cands {
            let mut hyp = live[i].hyp.clone();
            hyp.log_prob = lp;
            if t == EOS {
                hyp.finished = true;
                done.push(hyp);
                continue;
            }
            hyp.tokens.push(t);
            if step + 1 == max_len {
                done.push(hyp);
                continue;
            }
            let (state, next) = scorer.feed(&live[i].state, t)?;
            next_live.push(Live { hyp, state, next });
        }
        live = next_live;
        if live.is_empty() {
            break;
        }
    }
    done.sort_by(by_score);
    Ok(done.remove(0))
}

/// Incremental scorer over a translation model with frozen parameters.
pub struct ModelScorer<'f, 'a, T: Scalar> {
    f: &'f Fwd<'a, T>,
    model: &'f TranslationModel,
    start: DecoderState,
}

impl<'f, 'a, T: Scalar> ModelScorer<'f, 'a, T> {
    pub fn new(f: &'f Fwd<'a, T>, model: &'f TranslationModel, src: &[usize]) -> Result<Self> {
        let input = with_eos(src);
        let memory = model.encode(f, TokenInput::Ids(&input))?;
        let start = model.start(f, memory)?;
        Ok(ModelScorer { f, model, start })
    }

    fn advance(&self, state: &DecoderState, token: usize) -> Result<(DecoderState, Vec<f64>)> {
        let (next, logits) = self.model.step(self.f, state, TokenInput::Ids(&[token]))?;
        let lp = self.f.g.log_softmax(logits)?;
        Ok((next, self.f.g.value(lp).to_f64_vec()))
    }
}

impl<T: Scalar> StepScorer for ModelScorer<'_, '_, T> {
    type State = DecoderState;

    fn start(&mut self) -> Result<(DecoderState, Vec<f64>)> {
        self.advance(&self.start.clone(), BOS)
    }

    fn feed(&mut self, state: &DecoderState, token: usize) -> Result<(DecoderState, Vec<f64>)> {
        self.advance(state, token)
    }
}

impl TranslationModel {
    /// Beam-search translation of `src` with the parameters in `store`.
    pub fn translate<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        src: &[usize],
        width: usize,
    ) -> Result<Vec<usize>> {
        let g = Graph::new();
        let f = Fwd::eval(&g, Params::frozen(store));
        let mut scorer = ModelScorer::new(&f, self, src)?;
        let max_len = latent_max_len(src.len()).min(self.dims.max_positions - 1);
        Ok(beam_search(&mut scorer, width, max_len)?.tokens)
    }
}
