use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::objectives::LossReport;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub iteration: u64,
    pub lr: f64,
    pub as_ratio: f64,
    pub bilingual_st: f64,
    pub bilingual_ts: f64,
    pub recon_tst: f64,
    pub kl_tst: f64,
    pub recon_sts: f64,
    pub kl_sts: f64,
    pub total: f64,
}

impl MetricsRecord {
    pub fn new(iteration: u64, lr: f64, as_ratio: f64, r: &LossReport) -> Self {
        MetricsRecord {
            iteration,
            lr,
            as_ratio,
            bilingual_st: r.bilingual_st,
            bilingual_ts: r.bilingual_ts,
            recon_tst: r.recon_tst,
            kl_tst: r.kl_tst,
            recon_sts: r.recon_sts,
            kl_sts: r.kl_sts,
            total: r.total,
        }
    }
}

/// Append-only JSON-lines log, flushed after every record.
pub struct MetricsLog {
    path: PathBuf,
    file: File,
}

impl MetricsLog {
    pub fn append(path: &Path) -> Result<Self> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| CoreError::io(path, e))?;
        Ok(MetricsLog {
            path: path.to_path_buf(),
            file,
        })
    }

    pub fn write(&mut self, record: &MetricsRecord) -> Result<()> {
        let line = serde_json::to_string(record).expect("plain struct serializes");
        writeln!(self.file, "{line}")
            .and_then(|_| self.file.flush())
            .map_err(|e| CoreError::io(&self.path, e))
    }

    pub fn read(path: &Path) -> Result<Vec<MetricsRecord>> {
        let file = File::open(path).map_err(|e| CoreError::io(path, e))?;
        BufReader::new(file)
            .lines()
            .map(|l| {
                let l = l.map_err(|e| CoreError::io(path, e))?;
                serde_json::from_str(&l)
                    .map_err(|e| CoreError::Config(format!("{}: {e}", path.display())))
            })
            .collect()
    }
}
