//! Corpora: whitespace-tokenized files and a synthetic language pair with an
//! exact oracle translator.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::objectives::Pair;
use crate::vocab::Vocabulary;

/// Sentences longer than this are dropped on load.
pub const DEFAULT_LENGTH_CAP: usize = 50;

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub vocab: Vocabulary,
    pub bilingual: Vec<Pair>,
    pub mono_src: Vec<Vec<usize>>,
    pub mono_tgt: Vec<Vec<usize>>,
    /// Held-out pairs for evaluation; may be empty.
    pub test: Vec<Pair>,
}

impl Corpus {
    /// Every id is in range and no sentence is empty or over `cap`.
    pub fn check(&self, cap: usize) -> Result<()> {
        let v = self.vocab.len();
        let all = self
            .bilingual
            .iter()
            .chain(&self.test)
            .flat_map(|(s, t)| [s, t])
            .chain(&self.mono_src)
            .chain(&self.mono_tgt);
        for s in all {
            if s.is_empty() || s.len() > cap {
                return Err(CoreError::InvalidArgument(format!(
                    "sentence length {} outside 1..={cap}",
                    s.len()
                )));
            }
            if let Some(&bad) = s.iter().find(|&&i| i >= v) {
                return Err(CoreError::DimensionMismatch {
                    what: "token id vs vocabulary",
                    left: bad,
                    right: v,
                });
            }
        }
        Ok(())
    }
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
    Ok(text.lines().map(str::to_owned).collect())
}

/// Paths of a corpus on disk. Parallel files must align line by line.
#[derive(Clone, Debug, Default)]
pub struct CorpusPaths {
    pub src: PathBuf,
    pub tgt: PathBuf,
    pub mono_src: Option<PathBuf>,
    pub mono_tgt: Option<PathBuf>,
    pub test_src: Option<PathBuf>,
    pub test_tgt: Option<PathBuf>,
}

impl CorpusPaths {
    /// The file layout written by [`SyntheticTask::write`].
    pub fn in_dir(dir: &Path) -> Self {
        CorpusPaths {
            src: dir.join("train.src"),
            tgt: dir.join("train.tgt"),
            mono_src: Some(dir.join("mono.src")),
            mono_tgt: Some(dir.join("mono.tgt")),
            test_src: Some(dir.join("test.src")),
            test_tgt: Some(dir.join("test.tgt")),
        }
    }
}

fn load_parallel(src: &Path, tgt: &Path, vocab: &Vocabulary, cap: usize) -> Result<Vec<Pair>> {
    let (a, b) = (read_lines(src)?, read_lines(tgt)?);
    if a.len() != b.len() {
        return Err(CoreError::LineCountMismatch {
            path: tgt.to_path_buf(),
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(a.iter()
        .zip(&b)
        .map(|(s, t)| (vocab.encode(s), vocab.encode(t)))
        .filter(|(s, t)| (1..=cap).contains(&s.len()) && (1..=cap).contains(&t.len()))
        .collect())
}

fn load_mono(path: &Path, vocab: &Vocabulary, cap: usize) -> Result<Vec<Vec<usize>>> {
    Ok(read_lines(path)?
        .iter()
        .map(|l| vocab.encode(l))
        .filter(|s| (1..=cap).contains(&s.len()))
        .collect())
}

/// Read UTF-8, one whitespace-tokenized sentence per line. Unknown tokens
/// become UNK; a pair is dropped when either side is empty or over `cap`.
pub fn load_corpus(paths: &CorpusPaths, vocab: &Vocabulary, cap: usize) -> Result<Corpus> {
    let bilingual = load_parallel(&paths.src, &paths.tgt, vocab, cap)?;
    let mono = |p: &Option<PathBuf>| -> Result<Vec<Vec<usize>>> {
        p.as_deref().map_or(Ok(Vec::new()), |p| load_mono(p, vocab, cap))
    };
    let test = match (&paths.test_src, &paths.test_tgt) {
        (Some(s), Some(t)) => load_parallel(s, t, vocab, cap)?,
        _ => Vec::new(),
    };
    Ok(Corpus {
        vocab: vocab.clone(),
        bilingual,
        mono_src: mono(&paths.mono_src)?,
        mono_tgt: mono(&paths.mono_tgt)?,
        test,
    })
}

pub fn read_vocabulary(path: &Path) -> Result<Vocabulary> {
    let lines = read_lines(path)?;
    Vocabulary::new(lines.iter().map(|l| l.trim()).filter(|l| !l.is_empty()))
}

pub fn write_vocabulary(vocab: &Vocabulary, path: &Path) -> Result<()> {
    let mut text = vocab.tokens().join("\n");
    text.push('\n');
    fs::write(path, text).map_err(|e| CoreError::io(path, e))
}

fn write_sentences<'a>(
    path: &Path,
    vocab: &Vocabulary,
    sentences: impl Iterator<Item = &'a Vec<usize>>,
) -> Result<()> {
    let mut text = String::new();
    for s in sentences {
        text.push_str(&vocab.decode(s));
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| CoreError::io(path, e))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticTaskSpec {
    /// Content tokens per language; the joint vocabulary holds both sets
    /// plus the reserved tokens.
    pub words_per_language: usize,
    pub seed: u64,
    /// Target word order reverses each consecutive chunk of this many words.
    pub window: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Successors each word may have in the source bigram process.
    pub branching: usize,
    pub bilingual: usize,
    pub mono: usize,
    pub test: usize,
}

impl Default for SyntheticTaskSpec {
    fn default() -> Self {
        SyntheticTaskSpec {
            words_per_language: 30,
            seed: 7,
            window: 3,
            min_len: 4,
            max_len: 12,
            branching: 4,
            bilingual: 500,
            mono: 5000,
            test: 200,
        }
    }
}

impl SyntheticTaskSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(CoreError::Config(m.to_owned()));
        if self.words_per_language < 2 {
            return bad("words_per_language must be at least 2");
        }
        if self.window == 0 {
            return bad("window must be at least 1");
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return bad("need 1 <= min_len <= max_len");
        }
        if self.branching == 0 {
            return bad("branching must be at least 1");
        }
        Ok(())
    }
}

/// Source language: a sparse bigram process over its own words. Target
/// language: word-for-word substitution into the other word set followed by
/// reversal of each chunk of `window` words. Both maps are exact bijections.
#[derive(Clone, Debug)]
pub struct SyntheticTask {
    pub spec: SyntheticTaskSpec,
    pub vocab: Vocabulary,
    /// Bijection on all ids; identity on reserved ids, swaps the two word
    /// sets.
    pub perm: Vec<usize>,
    inverse: Vec<usize>,
    successors: Vec<Vec<(usize, f64)>>,
    first: usize,
}

fn reorder(words: &[usize], window: usize) -> Vec<usize> {
    words
        .chunks(window)
        .flat_map(|c| c.iter().rev().copied())
        .collect()
}

impl SyntheticTask {
    pub fn new(spec: SyntheticTaskSpec) -> Result<Self> {
        spec.validate()?;
        let n = spec.words_per_language;
        let names = (0..n)
            .map(|i| format!("a{i}"))
            .chain((0..n).map(|i| format!("b{i}")));
        let vocab = Vocabulary::new(names)?;
        let first = Vocabulary::first_regular();
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let src_ids: Vec<usize> = (first..first + n).collect();
        let mut tgt_ids: Vec<usize> = (first + n..first + 2 * n).collect();
        tgt_ids.shuffle(&mut rng);
        let mut perm: Vec<usize> = (0..vocab.len()).collect();
        for (&s, &t) in src_ids.iter().zip(&tgt_ids) {
            perm[s] = t;
            perm[t] = s;
        }
        let mut inverse = vec![0; perm.len()];
        for (i, &p) in perm.iter().enumerate() {
            inverse[p] = i;
        }
        let successors = (0..n)
            .map(|_| {
                let mut next: Vec<usize> = src_ids.clone();
                next.shuffle(&mut rng);
                next.truncate(spec.branching.min(n));
                let weights: Vec<f64> = (0..next.len()).map(|r| 1.0 / (r + 1) as f64).collect();
                let z: f64 = weights.iter().sum();
                next.into_iter().zip(weights.iter().map(|w| w / z)).collect()
            })
            .collect();
        Ok(SyntheticTask {
            spec,
            vocab,
            perm,
            inverse,
            successors,
            first,
        })
    }

    pub fn translate_st(&self, src: &[usize]) -> Vec<usize> {
        let sub: Vec<usize> = src.iter().map(|&w| self.perm[w]).collect();
        reorder(&sub, self.spec.window)
    }

    pub fn translate_ts(&self, tgt: &[usize]) -> Vec<usize> {
        reorder(tgt, self.spec.window)
            .into_iter()
            .map(|w| self.inverse[w])
            .collect()
    }

    fn sample_source<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<usize> {
        let n = self.spec.words_per_language;
        let len = rng.gen_range(self.spec.min_len..=self.spec.max_len);
        let mut w = self.first + rng.gen_range(0..n);
        let mut out = vec![w];
        while out.len() < len {
            let succ = &self.successors[w - self.first];
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            w = succ.last().expect("branching >= 1").0;
            for &(s, p) in succ {
                acc += p;
                if u < acc {
                    w = s;
                    break;
                }
            }
            out.push(w);
        }
        out
    }

    /// Disjoint bilingual, monolingual and test splits of distinct source
    /// sentences. The monolingual target side is the translation of source
    /// sentences that appear nowhere else.
    pub fn generate(&self) -> Result<Corpus> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.spec.seed ^ 0x9e37_79b9_7f4a_7c15);
        let s = &self.spec;
        let need = s.bilingual + 2 * s.mono + s.test;
        let mut seen = HashSet::with_capacity(need);
        let mut sentences = Vec::with_capacity(need);
        let mut misses = 0usize;
        while sentences.len() < need {
            let x = self.sample_source(&mut rng);
            if seen.insert(x.clone()) {
                sentences.push(x);
                misses = 0;
            } else {
                misses += 1;
                if misses > 10_000 {
                    return Err(CoreError::Config(format!(
                        "cannot draw {need} distinct sentences; widen the task"
                    )));
                }
            }
        }
        let mut it = sentences.into_iter();
        let mut take = |k: usize| it.by_ref().take(k).collect::<Vec<_>>();
        let pair = |x: Vec<usize>| {
            let y = self.translate_st(&x);
            (x, y)
        };
        let bilingual = take(s.bilingual).into_iter().map(pair).collect();
        let mono_src = take(s.mono);
        let mono_tgt = take(s.mono)
            .iter()
            .map(|x| self.translate_st(x))
            .collect();
        let test = take(s.test).into_iter().map(pair).collect();
        Ok(Corpus {
            vocab: self.vocab.clone(),
            bilingual,
            mono_src,
            mono_tgt,
            test,
        })
    }

    /// Write the corpus files, the vocabulary and the spec into `dir`.
    pub fn write(&self, corpus: &Corpus, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))?;
        let v = &corpus.vocab;
        write_vocabulary(v, &dir.join("vocab.txt"))?;
        let p = CorpusPaths::in_dir(dir);
        write_sentences(&p.src, v, corpus.bilingual.iter().map(|(s, _)| s))?;
        write_sentences(&p.tgt, v, corpus.bilingual.iter().map(|(_, t)| t))?;
        write_sentences(p.mono_src.as_ref().unwrap(), v, corpus.mono_src.iter())?;
        write_sentences(p.mono_tgt.as_ref().unwrap(), v, corpus.mono_tgt.iter())?;
        write_sentences(p.test_src.as_ref().unwrap(), v, corpus.test.iter().map(|(s, _)| s))?;
        write_sentences(p.test_tgt.as_ref().unwrap(), v, corpus.test.iter().map(|(_, t)| t))?;
        let spec = toml::to_string(&self.spec).map_err(|e| CoreError::Config(e.to_string()))?;
        let path = dir.join("spec.toml");
        fs::write(&path, spec).map_err(|e| CoreError::io(&path, e))
    }
}

/// Generate the synthetic corpus described by `spec`.
pub fn generate_synthetic_pair(spec: &SyntheticTaskSpec) -> Result<(SyntheticTask, Corpus)> {
    let task = SyntheticTask::new(spec.clone())?;
    let corpus = task.generate()?;
    Ok((task, corpus))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticTaskSpec {
        SyntheticTaskSpec {
            bilingual: 50,
            mono: 80,
            test: 20,
            ..SyntheticTaskSpec::default()
        }
    }

    #[test]
    fn permutation_is_an_involution_off_reserved() {
        let task = SyntheticTask::new(small()).unwrap();
        for (i, &p) in task.perm.iter().enumerate() {
            assert_eq!(task.inverse[p], i);
            if i < Vocabulary::first_regular() {
                assert_eq!(p, i);
            }
        }
    }

    #[test]
    fn oracle_is_exact_both_ways() {
        let (task, corpus) = generate_synthetic_pair(&small()).unwrap();
        for (x, y) in corpus.bilingual.iter().chain(&corpus.test) {
            assert_eq!(&task.translate_st(x), y);
            assert_eq!(&task.translate_ts(y), x);
        }
        corpus.check(DEFAULT_LENGTH_CAP).unwrap();
    }

    #[test]
    fn splits_are_disjoint() {
        let (task, corpus) = generate_synthetic_pair(&small()).unwrap();
        let mut seen = HashSet::new();
        let sources = corpus
            .bilingual
            .iter()
            .chain(&corpus.test)
            .map(|(s, _)| s.clone())
            .chain(corpus.mono_src.iter().cloned())
            .chain(corpus.mono_tgt.iter().map(|y| task.translate_ts(y)));
        for s in sources {
            assert!(seen.insert(s));
        }
    }

    #[test]
    fn reorder_is_an_involution() {
        let w: Vec<usize> = (10..17).collect();
        assert_eq!(reorder(&w, 3), vec![12, 11, 10, 15, 14, 13, 16]);
        assert_eq!(reorder(&reorder(&w, 3), 3), w);
    }
}
