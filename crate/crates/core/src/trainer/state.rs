use e2ebt_tensor::Scalar;

use super::{Adam, BTConfig, BtTrainer, FEGState, Prior, SyntheticCache, Translators};
use crate::checkpoint::Checkpoint;
use crate::error::{CoreError, Result};
use crate::model::{ModelDims, Side};

const NMT: &str = "nmt/";
const LM: &str = "lm/";
const LM_SRC: &str = "prior.src/";
const LM_TGT: &str = "prior.tgt/";
const ADAM_M: &str = "adam.m/";
const ADAM_V: &str = "adam.v/";
const FEG: &str = "feg/";

fn json<X: serde::Serialize>(x: &X) -> String {
    serde_json::to_string(x).expect("plain struct serializes")
}

fn from_json<X: serde::de::DeserializeOwned>(ck: &Checkpoint, key: &str) -> Result<X> {
    serde_json::from_str(ck.meta_str(key)?)
        .map_err(|e| CoreError::Checkpoint(format!("metadata {key:?}: {e}")))
}

fn expect_kind(ck: &Checkpoint, kind: &str) -> Result<()> {
    let k = ck.meta_str("kind")?;
    if k != kind {
        return Err(CoreError::Checkpoint(format!("expected a {kind} checkpoint, found {k}")));
    }
    Ok(())
}

impl<T: Scalar> Translators<T> {
    pub fn write_into(&self, ck: &mut Checkpoint) {
        ck.set_meta("kind", "nmt");
        ck.set_meta("dims", json(&self.st.dims));
        ck.push_store(NMT, &self.store);
    }

    /// Reads the translation models from an `nmt` or `bt` checkpoint.
    pub fn read_from(ck: &Checkpoint) -> Result<Self> {
        let dims: ModelDims = from_json(ck, "dims")?;
        Translators::from_store(ck.store(NMT)?, dims)
    }
}

impl<T: Scalar> Prior<T> {
    pub fn write_into(&self, ck: &mut Checkpoint) {
        ck.set_meta("kind", "lm");
        ck.set_meta("side", self.lm.side);
        ck.set_meta("dims", json(&self.lm.dims));
        ck.push_store(LM, &self.store);
    }

    pub fn read_from(ck: &Checkpoint) -> Result<Self> {
        expect_kind(ck, "lm")?;
        let side: Side = ck.meta_parse("side")?;
        let dims: ModelDims = from_json(ck, "dims")?;
        Prior::from_store(ck.store(LM)?, side, dims)
    }
}

impl<T: Scalar> BtTrainer<T> {
    /// Everything needed to continue training bit-for-bit.
    pub fn write_into(&self, ck: &mut Checkpoint) {
        self.nmt.write_into(ck);
        ck.set_meta("kind", "bt");
        ck.set_meta("bt", json(&self.config));
        ck.set_meta("lm_dims.src", json(&self.lm_src.lm.dims));
        ck.set_meta("lm_dims.tgt", json(&self.lm_tgt.lm.dims));
        ck.set_meta("iteration", self.iteration);
        ck.set_meta("adam.step", self.adam.step);
        ck.set_meta("feg.since_copy", self.feg.iterations_since_copy);
        ck.set_meta("feg.present", self.feg.snapshot.is_some());
        for id in self.nmt.store.ids() {
            if let Some((m, v)) = self.adam.moments(id) {
                let name = &self.nmt.store.param(id).name;
                ck.push_tensor(format!("{ADAM_M}{name}"), m);
                ck.push_tensor(format!("{ADAM_V}{name}"), v);
            }
        }
        if let Some(s) = &self.feg.snapshot {
            ck.push_store(FEG, s);
        }
        ck.push_store(LM_SRC, &self.lm_src.store);
        ck.push_store(LM_TGT, &self.lm_tgt.store);
        ck.push_u64("cache.src", self.cache_src.to_flat());
        ck.push_u64("cache.tgt", self.cache_tgt.to_flat());
    }

    pub fn read_from(ck: &Checkpoint) -> Result<Self> {
        expect_kind(ck, "bt")?;
        let config: BTConfig = from_json(ck, "bt")?;
        config.validate()?;
        let nmt = Translators::<T>::read_from(ck)?;
        if config.sep != nmt.shares_embedding() {
            return Err(CoreError::Checkpoint(
                "embedding sharing disagrees with the stored configuration".into(),
            ));
        }
        let lm_src = Prior::from_store(ck.store(LM_SRC)?, Side::Src, from_json(ck, "lm_dims.src")?)?;
        let lm_tgt = Prior::from_store(ck.store(LM_TGT)?, Side::Tgt, from_json(ck, "lm_dims.tgt")?)?;
        let mut adam = Adam::new(config.adam_beta1, config.adam_beta2, config.adam_eps);
        adam.step = ck.meta_parse("adam.step")?;
        for id in nmt.store.ids() {
            let name = &nmt.store.param(id).name;
            let m = format!("{ADAM_M}{name}");
            if ck.array(&m).is_some() {
                adam.set_moments(id, ck.tensor(&m)?, ck.tensor(&format!("{ADAM_V}{name}"))?);
            }
        }
        let mut feg = FEGState::new(config.feg_interval);
        feg.iterations_since_copy = ck.meta_parse("feg.since_copy")?;
        if ck.meta_parse::<bool>("feg.present")? {
            let mut snap = nmt.store.snapshot();
            ck.fill_store(FEG, &mut snap)?;
            feg.snapshot = Some(snap);
        }
        Ok(BtTrainer {
            iteration: ck.meta_parse("iteration")?,
            cache_src: SyntheticCache::from_flat(ck.u64s("cache.src")?)?,
            cache_tgt: SyntheticCache::from_flat(ck.u64s("cache.tgt")?)?,
            config,
            nmt,
            lm_src,
            lm_tgt,
            feg,
            adam,
        })
    }
}
