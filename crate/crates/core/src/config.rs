//! Run configuration: one TOML document with sectioned keys such as
//! `bt.lambda_x = 0.01`. Unknown keys are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{SyntheticTaskSpec, DEFAULT_LENGTH_CAP};
use crate::error::{CoreError, Result};
use crate::model::ModelDims;
use crate::trainer::{BTConfig, PretrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    /// Directory holding the corpus files and `vocab.txt`.
    pub data: PathBuf,
    pub checkpoints: PathBuf,
    pub logs: PathBuf,
    pub nmt_checkpoint: Option<PathBuf>,
    pub lm_src_checkpoint: Option<PathBuf>,
    pub lm_tgt_checkpoint: Option<PathBuf>,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            data: "data".into(),
            checkpoints: "checkpoints".into(),
            logs: "logs".into(),
            nmt_checkpoint: None,
            lm_src_checkpoint: None,
            lm_tgt_checkpoint: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub length_cap: usize,
    /// Checkpoint every this many BT iterations; 0 only at the end.
    pub checkpoint_every: u64,
    pub paths: PathsConfig,
    /// `model.vocab` is filled from the vocabulary file when zero.
    pub model: ModelDims,
    pub pretrain: PretrainConfig,
    pub bt: BTConfig,
    pub data: SyntheticTaskSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: None,
            length_cap: DEFAULT_LENGTH_CAP,
            checkpoint_every: 1000,
            paths: PathsConfig::default(),
            model: ModelDims::default(),
            pretrain: PretrainConfig::default(),
            bt: BTConfig::default(),
            data: SyntheticTaskSpec::default(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CoreError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
        Self::parse(&text).map_err(|e| CoreError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Apply `section.key = value` overrides, each parsed as a TOML value
    /// (bare strings are accepted as strings).
    pub fn with_overrides<'a>(&self, overrides: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let mut doc: toml::Table = toml::from_str(&self.to_toml()).expect("round trip");
        for o in overrides {
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| CoreError::Config(format!("override {o:?} is not key=value")))?;
            let raw = raw.trim();
            let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
                .ok()
                .and_then(|mut t| t.remove("v"))
                .unwrap_or_else(|| toml::Value::String(raw.to_owned()));
            let mut table = &mut doc;
            let parts: Vec<&str> = key.trim().split('.').collect();
            let (last, sections) = parts.split_last().expect("split yields one part");
            for s in sections {
                table = table
                    .entry(s.to_string())
                    .or_insert_with(|| toml::Value::Table(Default::default()))
                    .as_table_mut()
                    .ok_or_else(|| CoreError::Config(format!("{key}: {s} is not a section")))?;
            }
            table.insert(last.to_string(), value);
        }
        let text = toml::to_string(&doc).expect("table serializes");
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.bt.validate()?;
        self.data.validate()?;
        if self.model.vocab > 0 {
            self.model.validate()?;
        }
        if self.length_cap == 0 {
            return Err(CoreError::Config("length_cap must be positive".into()));
        }
        Ok(())
    }
}
