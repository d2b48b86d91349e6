#![allow(dead_code)]

use e2ebt_core::data::{generate_synthetic_pair, Corpus, SyntheticTask, SyntheticTaskSpec};
use e2ebt_core::model::{ModelDims, Side};
use e2ebt_core::trainer::{BTConfig, Prior, Translators};
use e2ebt_tensor::Scalar;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn tiny_spec() -> SyntheticTaskSpec {
    SyntheticTaskSpec {
        words_per_language: 6,
        min_len: 2,
        max_len: 5,
        branching: 3,
        bilingual: 20,
        mono: 40,
        test: 8,
        ..Default::default()
    }
}

pub fn tiny_task() -> (SyntheticTask, Corpus) {
    generate_synthetic_pair(&tiny_spec()).unwrap()
}

pub fn tiny_dims(vocab: usize) -> ModelDims {
    ModelDims {
        vocab,
        d_model: 8,
        heads: 2,
        d_ff: 16,
        enc_layers: 1,
        dec_layers: 1,
        max_positions: 40,
        dropout: 0.1,
    }
}

pub struct Tiny<T: Scalar> {
    pub nmt: Translators<T>,
    pub lm_src: Prior<T>,
    pub lm_tgt: Prior<T>,
    pub corpus: Corpus,
}

pub fn tiny_system<T: Scalar>(seed: u64) -> Tiny<T> {
    let (_, corpus) = tiny_task();
    let dims = tiny_dims(corpus.vocab.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tiny {
        nmt: Translators::new(dims, &mut rng).unwrap(),
        lm_src: Prior::new(Side::Src, dims, &mut rng).unwrap(),
        lm_tgt: Prior::new(Side::Tgt, dims, &mut rng).unwrap(),
        corpus,
    }
}

pub fn tiny_bt_config() -> BTConfig {
    BTConfig {
        batch_bilingual: 2,
        batch_monolingual: 2,
        warmup_iters: 10,
        max_iters: 200,
        feg_interval: 5,
        log_every: 1,
        ..Default::default()
    }
}

pub fn bits(r: &e2ebt_core::objectives::LossReport) -> [u64; 7] {
    [
        r.bilingual_st,
        r.bilingual_ts,
        r.recon_tst,
        r.kl_tst,
        r.recon_sts,
        r.kl_sts,
        r.total,
    ]
    .map(f64::to_bits)
}
