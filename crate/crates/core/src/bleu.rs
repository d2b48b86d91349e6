//! Corpus-level BLEU-4 over token ids.

use std::collections::HashMap;

use crate::error::{CoreError, Result};

pub const MAX_ORDER: usize = 4;

fn ngram_counts(tokens: &[usize], n: usize) -> HashMap<&[usize], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped match and candidate totals per order, plus hypothesis and
/// reference lengths.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BleuStats {
    pub matches: [usize; MAX_ORDER],
    pub totals: [usize; MAX_ORDER],
    pub hyp_len: usize,
    pub ref_len: usize,
}

impl BleuStats {
    pub fn add(&mut self, hyp: &[usize], reference: &[usize]) {
        self.hyp_len += hyp.len();
        self.ref_len += reference.len();
        for n in 1..=MAX_ORDER {
            let r = ngram_counts(reference, n);
            for (gram, c) in ngram_counts(hyp, n) {
                self.matches[n - 1] += c.min(r.get(gram).copied().unwrap_or(0));
            }
            self.totals[n - 1] += hyp.len().saturating_sub(n - 1);
        }
    }

    pub fn score(&self) -> f64 {
        if self.hyp_len == 0 || self.matches[0] == 0 {
            return 0.0;
        }
        let floor = 1.0 / (2.0 * self.hyp_len as f64);
        let mut log_sum = 0.0;
        for n in 0..MAX_ORDER {
            let p = if self.matches[n] == 0 || self.totals[n] == 0 {
                floor
            } else {
                self.matches[n] as f64 / self.totals[n] as f64
            };
            log_sum += p.ln();
        }
        let c = self.hyp_len as f64;
        let r = self.ref_len as f64;
        let bp = if c >= r { 1.0 } else { (1.0 - r / c).exp() };
        100.0 * bp * (log_sum / MAX_ORDER as f64).exp()
    }
}

/// BLEU-4 in `[0, 100]`. Orders without a single match use the floor
/// `1 / (2 * hypothesis corpus length)`.
pub fn bleu(hypotheses: &[Vec<usize>], references: &[Vec<usize>]) -> Result<f64> {
    if hypotheses.len() != references.len() {
        return Err(CoreError::DimensionMismatch {
            what: "bleu corpus",
            left: hypotheses.len(),
            right: references.len(),
        });
    }
    if hypotheses.is_empty() {
        return Err(CoreError::Empty("bleu corpus"));
    }
    let mut stats = BleuStats::default();
    for (h, r) in hypotheses.iter().zip(references) {
        stats.add(h, r);
    }
    Ok(stats.score())
}
