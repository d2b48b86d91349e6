use e2ebt_tensor::Scalar;
use serde::{Deserialize, Serialize};

use crate::bleu::bleu;
use crate::error::Result;
use crate::objectives::Pair;
use crate::trainer::Translators;

/// Test BLEU per direction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectionalBleu {
    pub st: f64,
    pub ts: f64,
}

/// Beam-search both directions over `test` and score against the other
/// side.
pub fn evaluate<T: Scalar>(nmt: &Translators<T>, test: &[Pair], beam: usize) -> Result<DirectionalBleu> {
    let mut hyp_st = Vec::with_capacity(test.len());
    let mut hyp_ts = Vec::with_capacity(test.len());
    for (s, t) in test {
        hyp_st.push(nmt.st.translate(&nmt.store, s, beam)?);
        hyp_ts.push(nmt.ts.translate(&nmt.store, t, beam)?);
    }
    let srcs: Vec<Vec<usize>> = test.iter().map(|p| p.0.clone()).collect();
    let tgts: Vec<Vec<usize>> = test.iter().map(|p| p.1.clone()).collect();
    Ok(DirectionalBleu {
        st: bleu(&hyp_st, &tgts)?,
        ts: bleu(&hyp_ts, &srcs)?,
    })
}
