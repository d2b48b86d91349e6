use e2ebt_tensor::{Graph, Params, Scalar};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{lr_schedule, step_rng, Adam, Prior, Translators};
use crate::error::{CoreError, Result};
use crate::model::{Direction, Fwd};
use crate::objectives::{bilingual_loss, Pair};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub iters: u64,
    pub batch: usize,
    pub lr: f64,
    pub warmup_iters: u64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            iters: 2000,
            batch: 60,
            lr: 0.001,
            warmup_iters: 200,
            seed: 1,
        }
    }
}

fn draw<'a, X, R: Rng + ?Sized>(items: &'a [X], n: usize, rng: &mut R) -> Vec<&'a X> {
    (0..n).map(|_| &items[rng.gen_range(0..items.len())]).collect()
}

/// Supervised training of the chosen directions on `pairs`. `on_step`
/// receives the iteration and the mean per-token loss of each step.
pub fn pretrain_nmt<T: Scalar>(
    nmt: &mut Translators<T>,
    directions: &[Direction],
    pairs: &[Pair],
    config: &PretrainConfig,
    mut on_step: impl FnMut(u64, f64),
) -> Result<()> {
    if pairs.is_empty() {
        return Err(CoreError::Empty("bilingual corpus"));
    }
    let dropout = nmt.st.dims.dropout;
    let mut adam = Adam::new(0.9, 0.98, 1e-8);
    for it in 0..config.iters {
        let mut rng = step_rng(config.seed, it);
        let batch: Vec<Pair> = draw(pairs, config.batch, &mut rng).into_iter().cloned().collect();
        let g = Graph::<T>::new();
        let f = Fwd::train(&g, Params::trainable(&nmt.store), dropout, rng.gen());
        let mut total = None;
        for &d in directions {
            let l = bilingual_loss(&f, nmt.model(d), &batch)?;
            total = Some(match total {
                None => l,
                Some(t) => g.add(t, l)?,
            });
        }
        let Some(loss) = total else {
            return Ok(());
        };
        let value = g.value(loss).item().to_f64_lossy() / directions.len() as f64;
        let grads = g.backward(loss)?.params(&nmt.store);
        drop(f);
        let lr = lr_schedule(it + 1, config.lr, config.warmup_iters);
        adam.update(&mut nmt.store, grads, lr)?;
        on_step(it, value);
    }
    Ok(())
}

/// Maximum-likelihood training of a language model on `sentences`.
pub fn pretrain_lm<T: Scalar>(
    prior: &mut Prior<T>,
    sentences: &[Vec<usize>],
    config: &PretrainConfig,
    mut on_step: impl FnMut(u64, f64),
) -> Result<()> {
    if sentences.is_empty() {
        return Err(CoreError::Empty("language-model corpus"));
    }
    let dropout = prior.lm.dims.dropout;
    let mut adam = Adam::new(0.9, 0.98, 1e-8);
    for it in 0..config.iters {
        let mut rng = step_rng(config.seed, it);
        let batch = draw(sentences, config.batch, &mut rng);
        let g = Graph::<T>::new();
        let f = Fwd::train(&g, Params::trainable(&prior.store), dropout, rng.gen());
        let mut sum = None;
        let mut tokens = 0;
        for s in batch {
            let l = prior.lm.nll(&f, s)?;
            tokens += s.len() + 1;
            sum = Some(match sum {
                None => l,
                Some(t) => g.add(t, l)?,
            });
        }
        let loss = g.scale(sum.expect("batch >= 1"), T::from_f64_lossy(1.0 / tokens as f64));
        let value = g.value(loss).item().to_f64_lossy();
        let grads = g.backward(loss)?.params(&prior.store);
        drop(f);
        let lr = lr_schedule(it + 1, config.lr, config.warmup_iters);
        adam.update(&mut prior.store, grads, lr)?;
        on_step(it, value);
    }
    Ok(())
}
