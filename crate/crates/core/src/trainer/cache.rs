use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{CoreError, Result};
use crate::model::DifferentiableSentence;
use crate::objectives::LatentSource;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CacheEntry {
    pub words: Vec<usize>,
    pub stamp: u64,
}

/// Last latent sentence generated for each monolingual sentence id.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SyntheticCache {
    entries: BTreeMap<usize, CacheEntry>,
}

impl SyntheticCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, id: usize) -> Option<&CacheEntry> {
        self.entries.get(&id)
    }

    /// Store `words` for `id`; stamps may not go backwards.
    pub fn insert(&mut self, id: usize, words: Vec<usize>, stamp: u64) -> Result<()> {
        if let Some(old) = self.entries.get(&id) {
            if stamp < old.stamp {
                return Err(CoreError::InvalidArgument(format!(
                    "cache stamp for sentence {id} would go from {} back to {stamp}",
                    old.stamp
                )));
            }
        }
        self.entries.insert(id, CacheEntry { words, stamp });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &CacheEntry)> {
        self.entries.iter().map(|(&k, v)| (k, v))
    }

    /// Flat `[id, stamp, len, words...]*` encoding.
    pub fn to_flat(&self) -> Vec<u64> {
        let mut out = Vec::new();
        for (&id, e) in &self.entries {
            out.extend([id as u64, e.stamp, e.words.len() as u64]);
            out.extend(e.words.iter().map(|&w| w as u64));
        }
        out
    }

    pub fn from_flat(flat: &[u64]) -> Result<Self> {
        let mut cache = SyntheticCache::new();
        let mut i = 0;
        while i < flat.len() {
            let head = flat
                .get(i..i + 3)
                .ok_or_else(|| CoreError::Checkpoint("truncated cache entry".into()))?;
            let (id, stamp, n) = (head[0] as usize, head[1], head[2] as usize);
            let words = flat
                .get(i + 3..i + 3 + n)
                .ok_or_else(|| CoreError::Checkpoint("truncated cache words".into()))?;
            cache.insert(id, words.iter().map(|&w| w as usize).collect(), stamp)?;
            i += 3 + n;
        }
        Ok(cache)
    }
}

/// Online or semi-online latent retrieval. One uniform draw decides whether
/// to load: with probability `load_prob` a cached entry is returned when
/// present; otherwise `generate` runs and its words overwrite the cache.
pub fn fetch_latent<R, F>(
    cache: &mut SyntheticCache,
    id: usize,
    iteration: u64,
    load_prob: f64,
    rng: &mut R,
    generate: F,
) -> Result<LatentSource>
where
    R: Rng + ?Sized,
    F: FnOnce(&mut R) -> Result<DifferentiableSentence>,
{
    let load = rng.gen::<f64>() < load_prob;
    if load {
        if let Some(e) = cache.get(id) {
            return Ok(LatentSource::Cached(e.words.clone()));
        }
    }
    let latent = generate(rng)?;
    cache.insert(id, latent.words().to_vec(), iteration)?;
    Ok(LatentSource::Fresh(latent))
}
