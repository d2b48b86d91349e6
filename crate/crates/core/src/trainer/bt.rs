use e2ebt_tensor::{Graph, ParamStore, Params, Scalar};
use rand::Rng;

use super::{as_ratio, fetch_latent, lr_schedule, step_rng, Adam, BTConfig, FEGState, ReparamKind,
    SyntheticCache};
use crate::data::Corpus;
use crate::error::{CoreError, Result};
use crate::model::{
    infer_latent, latent_max_len, Direction, Fwd, LanguageModel, LatentReparam, ModelDims, Side,
    TranslationModel,
};
use crate::objectives::{
    composite_losses, CompositeBatch, LossReport, MonoExample, ObjectiveWeights, Pair, System,
};
use crate::reparam::SamplingStrategy;

/// Both translation directions in one parameter store.
#[derive(Clone, Debug)]
pub struct Translators<T: Scalar> {
    pub store: ParamStore<T>,
    pub st: TranslationModel,
    pub ts: TranslationModel,
}

impl<T: Scalar> Translators<T> {
    pub fn new<R: Rng + ?Sized>(dims: ModelDims, rng: &mut R) -> Result<Self> {
        let mut store = ParamStore::new();
        let st = TranslationModel::new(&mut store, Direction::St, dims, rng)?;
        let ts = TranslationModel::new(&mut store, Direction::Ts, dims, rng)?;
        Ok(Translators { store, st, ts })
    }

    /// Rebuild the models over an existing store, which must already hold
    /// every parameter.
    pub fn from_store(mut store: ParamStore<T>, dims: ModelDims) -> Result<Self> {
        let before = store.len();
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let st = TranslationModel::new(&mut store, Direction::St, dims, &mut rng)?;
        let ts = TranslationModel::new(&mut store, Direction::Ts, dims, &mut rng)?;
        if store.len() != before {
            return Err(CoreError::Checkpoint(format!(
                "{} translation parameters missing",
                store.len() - before
            )));
        }
        Ok(Translators { store, st, ts })
    }

    pub fn model(&self, d: Direction) -> &TranslationModel {
        match d {
            Direction::St => &self.st,
            Direction::Ts => &self.ts,
        }
    }

    pub fn shares_embedding(&self) -> bool {
        self.st.embed == self.ts.embed
    }
}

/// A frozen language model used as the prior over latent sentences.
#[derive(Clone, Debug)]
pub struct Prior<T: Scalar> {
    pub store: ParamStore<T>,
    pub lm: LanguageModel,
}

impl<T: Scalar> Prior<T> {
    pub fn new<R: Rng + ?Sized>(side: Side, dims: ModelDims, rng: &mut R) -> Result<Self> {
        let mut store = ParamStore::new();
        let lm = LanguageModel::new(&mut store, side, dims, rng)?;
        Ok(Prior { store, lm })
    }

    pub fn from_store(mut store: ParamStore<T>, side: Side, dims: ModelDims) -> Result<Self> {
        let before = store.len();
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let lm = LanguageModel::new(&mut store, side, dims, &mut rng)?;
        if store.len() != before {
            return Err(CoreError::Checkpoint(format!(
                "language model {side} is missing parameters"
            )));
        }
        Ok(Prior { store, lm })
    }
}

/// Sentences drawn for one step: bilingual pairs and monolingual sentences
/// tagged with their corpus index.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RawBatch {
    pub bilingual: Vec<Pair>,
    pub mono_src: Vec<(usize, Vec<usize>)>,
    pub mono_tgt: Vec<(usize, Vec<usize>)>,
}

/// Uniform draws with replacement per the configured composition.
pub fn sample_batch<R: Rng + ?Sized>(
    corpus: &Corpus,
    config: &BTConfig,
    rng: &mut R,
) -> Result<RawBatch> {
    fn draw<R: Rng + ?Sized, X: Clone>(
        items: &[X],
        n: usize,
        side: &'static str,
        rng: &mut R,
    ) -> Result<Vec<(usize, X)>> {
        if n > 0 && items.is_empty() {
            return Err(CoreError::MissingSide(side));
        }
        Ok((0..n)
            .map(|_| {
                let i = rng.gen_range(0..items.len());
                (i, items[i].clone())
            })
            .collect())
    }
    let bilingual = draw(&corpus.bilingual, config.batch_bilingual, "bilingual", rng)?
        .into_iter()
        .map(|(_, p)| p)
        .collect();
    let mono_src = draw(&corpus.mono_src, config.batch_monolingual, "monolingual source", rng)?;
    let mono_tgt = draw(&corpus.mono_tgt, config.batch_monolingual, "monolingual target", rng)?;
    Ok(RawBatch {
        bilingual,
        mono_src,
        mono_tgt,
    })
}

/// Full back-translation state: models, frozen priors, evaluating
/// generators, latent caches and optimizer.
#[derive(Clone, Debug)]
pub struct BtTrainer<T: Scalar> {
    pub config: BTConfig,
    pub nmt: Translators<T>,
    pub lm_src: Prior<T>,
    pub lm_tgt: Prior<T>,
    pub feg: FEGState<T>,
    pub cache_src: SyntheticCache,
    pub cache_tgt: SyntheticCache,
    pub adam: Adam<T>,
    /// Next iteration to run.
    pub iteration: u64,
}

impl<T: Scalar> BtTrainer<T> {
    /// Fresh optimizer state; shares embeddings first when configured.
    pub fn new(
        config: BTConfig,
        mut nmt: Translators<T>,
        lm_src: Prior<T>,
        lm_tgt: Prior<T>,
    ) -> Result<Self> {
        config.validate()?;
        if config.sep && !nmt.shares_embedding() {
            let Translators { store, st, ts } = &mut nmt;
            super::apply_sep(store, st, ts)?;
        }
        let adam = Adam::new(config.adam_beta1, config.adam_beta2, config.adam_eps);
        Ok(BtTrainer {
            feg: FEGState::new(config.feg_interval),
            config,
            nmt,
            lm_src,
            lm_tgt,
            cache_src: SyntheticCache::new(),
            cache_tgt: SyntheticCache::new(),
            adam,
            iteration: 0,
        })
    }

    pub fn lr(&self, iteration: u64) -> f64 {
        lr_schedule(iteration + 1, self.config.lr, self.config.warmup_iters)
    }

    fn latent_reparam(&self) -> LatentReparam {
        match self.config.reparam {
            ReparamKind::Crt => LatentReparam::Crt,
            ReparamKind::Gumbel => LatentReparam::Gumbel {
                tau: self.config.gumbel_tau,
            },
        }
    }

    /// One step on a batch drawn from `corpus`.
    pub fn train_step(&mut self, corpus: &Corpus) -> Result<LossReport> {
        let mut rng = step_rng(self.config.seed, self.iteration);
        let batch = sample_batch(corpus, &self.config, &mut rng)?;
        self.step_on(&batch, &mut rng)
    }

    /// One step on a given batch: infer latents, build the composite loss,
    /// update every translation parameter once.
    pub fn step_on<R: Rng + ?Sized>(&mut self, batch: &RawBatch, rng: &mut R) -> Result<LossReport> {
        let it = self.iteration;
        self.feg.step(&self.nmt.store, it);
        let ratio = as_ratio(it, &self.config);
        let strategy = SamplingStrategy::Mixed {
            stochastic_ratio: ratio,
        };
        let reparam = self.latent_reparam();
        let cfg = &self.config;
        let g = Graph::<T>::new();
        let infer = Fwd::eval(&g, Params::trainable(&self.nmt.store));
        let latents = |examples: &[(usize, Vec<usize>)],
                           model: &TranslationModel,
                           lambda: f64,
                           cache: &mut SyntheticCache,
                           rng: &mut R|
         -> Result<Vec<MonoExample>> {
            examples
                .iter()
                .map(|(id, y)| {
                    let latent = fetch_latent(cache, *id, it, cfg.cache_load_prob, rng, |r| {
                        infer_latent(
                            &infer,
                            model,
                            y,
                            strategy,
                            lambda,
                            latent_max_len(y.len()),
                            reparam,
                            r,
                        )
                    })?;
                    Ok(MonoExample {
                        sentence: y.clone(),
                        latent,
                    })
                })
                .collect()
        };
        let mono_tgt = latents(
            &batch.mono_tgt,
            &self.nmt.ts,
            cfg.lambda_x,
            &mut self.cache_tgt,
            rng,
        )?;
        let mono_src = latents(
            &batch.mono_src,
            &self.nmt.st,
            cfg.lambda_y,
            &mut self.cache_src,
            rng,
        )?;
        let composite = CompositeBatch {
            bilingual: batch.bilingual.clone(),
            mono_src,
            mono_tgt,
        };
        let sys = System {
            store: &self.nmt.store,
            st: &self.nmt.st,
            ts: &self.nmt.ts,
            evaluating: self.feg.evaluating(),
            lm_src: (&self.lm_src.store, &self.lm_src.lm),
            lm_tgt: (&self.lm_tgt.store, &self.lm_tgt.lm),
        };
        let weights = ObjectiveWeights {
            alpha_x: cfg.alpha_x,
            alpha_y: cfg.alpha_y,
            dropout: self.nmt.st.dims.dropout,
        };
        let (loss, report) = composite_losses(&g, &sys, &composite, weights, rng.gen())?;
        if !report.is_finite() || !g.value(loss).all_finite() {
            return Err(CoreError::NonFiniteLoss {
                iteration: it,
                report: format!("{report:?}"),
            });
        }
        let grads = g.backward(loss)?.params(&self.nmt.store);
        drop(infer);
        drop(g);
        let lr = self.lr(it);
        self.adam.update(&mut self.nmt.store, grads, lr)?;
        if !self.nmt.store.all_finite() {
            return Err(CoreError::NonFiniteLoss {
                iteration: it,
                report: "parameters became non-finite".into(),
            });
        }
        self.iteration += 1;
        Ok(report)
    }
}
