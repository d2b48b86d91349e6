use std::collections::HashMap;
use std::fs;

use e2ebt_core::bleu::bleu;
use e2ebt_core::data::{
    generate_synthetic_pair, load_corpus, read_vocabulary, CorpusPaths, SyntheticTaskSpec,
};
use e2ebt_core::error::CoreError;
use e2ebt_core::vocab::{Vocabulary, UNK};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Brute-force BLEU: explicit n-gram lists, clipping by linear scans.
fn bleu_oracle(hyps: &[Vec<usize>], refs: &[Vec<usize>]) -> f64 {
    let (mut c, mut r) = (0usize, 0usize);
    let mut matches = [0usize; 4];
    let mut totals = [0usize; 4];
    for (h, rf) in hyps.iter().zip(refs) {
        c += h.len();
        r += rf.len();
        for n in 1..=4 {
            let grams = |s: &Vec<usize>| -> Vec<Vec<usize>> {
                (0..s.len().saturating_sub(n - 1)).map(|i| s[i..i + n].to_vec()).collect()
            };
            let hg = grams(h);
            let rg = grams(rf);
            totals[n - 1] += hg.len();
            let mut seen: Vec<Vec<usize>> = Vec::new();
            for g in &hg {
                if seen.contains(g) {
                    continue;
                }
                seen.push(g.clone());
                let in_h = hg.iter().filter(|x| *x == g).count();
                let in_r = rg.iter().filter(|x| *x == g).count();
                matches[n - 1] += in_h.min(in_r);
            }
        }
    }
    if c == 0 || matches[0] == 0 {
        return 0.0;
    }
    let mut prod = 1.0;
    for n in 0..4 {
        prod *= if matches[n] == 0 {
            1.0 / (2.0 * c as f64)
        } else {
            matches[n] as f64 / totals[n] as f64
        };
    }
    let bp = if c >= r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    100.0 * bp * prod.powf(0.25)
}

#[test]
fn bleu_hand_example() {
    // a b c d e f vs a b c d x y
    let h = vec![vec![4, 5, 6, 7, 8, 9]];
    let r = vec![vec![4, 5, 6, 7, 10, 11]];
    let want = 100.0 * (4.0f64 / 6.0 * 3.0 / 5.0 * 2.0 / 4.0 * 1.0 / 3.0).powf(0.25);
    assert!((bleu(&h, &r).unwrap() - want).abs() < 1e-9);
    assert!((bleu_oracle(&h, &r) - want).abs() < 1e-9);
}

#[test]
fn bleu_brevity_and_clipping() {
    let h = vec![vec![4, 4, 4, 4]];
    let r = vec![vec![4, 5, 6, 7, 8, 9, 10, 11]];
    let got = bleu(&h, &r).unwrap();
    assert!((got - bleu_oracle(&h, &r)).abs() < 1e-9);
    assert!(got < 10.0);
}

fn corpus_strategy() -> impl Strategy<Value = (Vec<Vec<usize>>, Vec<Vec<usize>>)> {
    prop::collection::vec(
        (
            prop::collection::vec(4usize..9, 0..9),
            prop::collection::vec(4usize..9, 1..9),
        ),
        1..6,
    )
    .prop_map(|v| v.into_iter().unzip())
}

proptest! {
    #[test]
    fn bleu_matches_oracle((h, r) in corpus_strategy()) {
        prop_assert!((bleu(&h, &r).unwrap() - bleu_oracle(&h, &r)).abs() < 1e-9);
    }

    #[test]
    fn bleu_in_range_and_order_free((h, r) in corpus_strategy(), seed in any::<u64>()) {
        let b = bleu(&h, &r).unwrap();
        prop_assert!((0.0..=100.0 + 1e-9).contains(&b));
        let mut idx: Vec<usize> = (0..h.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..idx.len()).rev() {
            idx.swap(i, rng.gen_range(0..=i));
        }
        let h2: Vec<_> = idx.iter().map(|&i| h[i].clone()).collect();
        let r2: Vec<_> = idx.iter().map(|&i| r[i].clone()).collect();
        prop_assert!((bleu(&h2, &r2).unwrap() - b).abs() < 1e-9);
    }

    #[test]
    fn corrupting_a_match_never_helps(r in prop::collection::vec(4usize..9, 1..10), pos in any::<prop::sample::Index>()) {
        let h = vec![r.clone()];
        let refs = vec![r.clone()];
        let mut bad = r.clone();
        let i = pos.index(bad.len());
        bad[i] = 99;
        prop_assert!(bleu(&[bad], &refs).unwrap() <= bleu(&h, &refs).unwrap() + 1e-12);
    }
}

#[test]
fn oracle_translator_scores_100_and_random_scores_below_1() {
    let spec = SyntheticTaskSpec {
        words_per_language: 60,
        ..Default::default()
    };
    let (task, corpus) = generate_synthetic_pair(&spec).unwrap();
    assert!(corpus.vocab.len() >= 100);
    let srcs: Vec<_> = corpus.test.iter().map(|p| p.0.clone()).collect();
    let tgts: Vec<_> = corpus.test.iter().map(|p| p.1.clone()).collect();
    let oracle: Vec<_> = srcs.iter().map(|s| task.translate_st(s)).collect();
    assert_eq!(bleu(&oracle, &tgts).unwrap(), 100.0);
    let back: Vec<_> = tgts.iter().map(|t| task.translate_ts(t)).collect();
    assert_eq!(bleu(&back, &srcs).unwrap(), 100.0);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let random: Vec<Vec<usize>> = tgts
        .iter()
        .map(|t| (0..t.len()).map(|_| rng.gen_range(4..corpus.vocab.len())).collect())
        .collect();
    assert!(bleu(&random, &tgts).unwrap() < 1.0);
}

#[test]
fn generation_is_seeded() {
    let spec = SyntheticTaskSpec {
        mono: 100,
        ..Default::default()
    };
    let (_, a) = generate_synthetic_pair(&spec).unwrap();
    let (_, b) = generate_synthetic_pair(&spec).unwrap();
    assert_eq!(a.bilingual, b.bilingual);
    assert_eq!(a.mono_tgt, b.mono_tgt);
    let (_, c) = generate_synthetic_pair(&SyntheticTaskSpec { seed: 8, ..spec }).unwrap();
    assert_ne!(a.bilingual, c.bilingual);
}

#[test]
fn written_corpus_loads_back() {
    let spec = SyntheticTaskSpec {
        bilingual: 30,
        mono: 50,
        test: 10,
        ..Default::default()
    };
    let (task, corpus) = generate_synthetic_pair(&spec).unwrap();
    let dir = tempfile::tempdir().unwrap();
    task.write(&corpus, dir.path()).unwrap();
    let vocab = read_vocabulary(&dir.path().join("vocab.txt")).unwrap();
    assert_eq!(vocab.tokens(), corpus.vocab.tokens());
    let back = load_corpus(&CorpusPaths::in_dir(dir.path()), &vocab, 50).unwrap();
    assert_eq!(back.bilingual, corpus.bilingual);
    assert_eq!(back.mono_src, corpus.mono_src);
    assert_eq!(back.mono_tgt, corpus.mono_tgt);
    assert_eq!(back.test, corpus.test);
    let spec_back: SyntheticTaskSpec =
        toml::from_str(&fs::read_to_string(dir.path().join("spec.toml")).unwrap()).unwrap();
    assert_eq!(spec_back, spec);
}

#[test]
fn loader_caps_length_maps_unknowns_and_checks_alignment() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let long51 = vec!["a"; 51].join(" ");
    let long50 = vec!["a"; 50].join(" ");
    fs::write(p.join("s"), format!("a b\n{long51}\n{long50}\nzzz a\n")).unwrap();
    fs::write(p.join("t"), "b\nb\nb\nb\n").unwrap();
    let vocab = Vocabulary::from_corpus(["a b"]).unwrap();
    let paths = CorpusPaths {
        src: p.join("s"),
        tgt: p.join("t"),
        ..Default::default()
    };
    let c = load_corpus(&paths, &vocab, 50).unwrap();
    assert_eq!(c.bilingual.len(), 3);
    assert_eq!(c.bilingual[1].0.len(), 50);
    assert_eq!(c.bilingual[2].0[0], UNK);
    fs::write(p.join("t"), "b\n").unwrap();
    assert!(matches!(
        load_corpus(&paths, &vocab, 50),
        Err(CoreError::LineCountMismatch { .. })
    ));
    let missing = CorpusPaths {
        src: p.join("nope"),
        ..paths
    };
    assert!(matches!(load_corpus(&missing, &vocab, 50), Err(CoreError::Io { .. })));
}

#[test]
fn source_bigrams_are_sparse() {
    let (_, corpus) = generate_synthetic_pair(&SyntheticTaskSpec::default()).unwrap();
    let mut succ: HashMap<usize, std::collections::HashSet<usize>> = HashMap::new();
    for s in &corpus.mono_src {
        for w in s.windows(2) {
            succ.entry(w[0]).or_default().insert(w[1]);
        }
    }
    assert!(succ.values().all(|s| s.len() <= 4));
}
