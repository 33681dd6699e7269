//! Run records: the configuration and per-epoch metrics of a training run,
//! stored as plain `key=value` text.

use std::fmt::Write as _;
use std::path::PathBuf;

use thiserror::Error;

use crate::config::{ConfigError, TrainConfig};

pub const RECORD_FORMAT: &str = "robust-detect-run/1";

#[derive(Debug, Error, PartialEq)]
pub enum RecordError {
    #[error("missing or unsupported format line")]
    Format,
    #[error("line {0}: malformed record entry")]
    Malformed(usize),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub mean_total: f64,
    pub mean_cvar: f64,
    pub mean_auc: f64,
    pub mean_lambda: f64,
    /// Learning rate used by the last step of the epoch.
    pub lr: f64,
    pub wall_seconds: f64,
    /// Batches with only one class, where the AUC term contributed nothing.
    pub single_class_batches: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainRunRecord {
    pub config: TrainConfig,
    pub epochs: Vec<EpochMetrics>,
    pub checkpoint: Option<PathBuf>,
    /// The bank had a single class, so the AUC term was never active.
    pub auc_term_disabled: bool,
}

impl TrainRunRecord {
    pub fn new(config: TrainConfig) -> Self {
        Self {
            config,
            epochs: Vec::new(),
            checkpoint: None,
            auc_term_disabled: false,
        }
    }

    pub fn seed(&self) -> u64 {
        self.config.seed
    }

    pub fn final_epoch(&self) -> Option<&EpochMetrics> {
        self.epochs.last()
    }

    pub fn to_kv(&self) -> String {
        let mut out = format!("format={RECORD_FORMAT}\n");
        out.push_str(&self.config.to_kv_prefixed("config."));
        if let Some(path) = &self.checkpoint {
            let _ = writeln!(out, "checkpoint={}", path.display());
        }
        let _ = writeln!(out, "auc_term_disabled={}", self.auc_term_disabled);
        let _ = writeln!(out, "epochs={}", self.epochs.len());
        for e in &self.epochs {
            let n = e.epoch;
            let _ = writeln!(out, "epoch.{n}.mean_total={:?}", e.mean_total);
            let _ = writeln!(out, "epoch.{n}.mean_cvar={:?}", e.mean_cvar);
            let _ = writeln!(out, "epoch.{n}.mean_auc={:?}", e.mean_auc);
            let _ = writeln!(out, "epoch.{n}.mean_lambda={:?}", e.mean_lambda);
            let _ = writeln!(out, "epoch.{n}.lr={:?}", e.lr);
            let _ = writeln!(out, "epoch.{n}.wall_seconds={:?}", e.wall_seconds);
            let _ = writeln!(out, "epoch.{n}.single_class_batches={}", e.single_class_batches);
        }
        out
    }

    pub fn from_kv(text: &str) -> Result<Self, RecordError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        match lines.next() {
            Some((_, l)) if l.trim() == format!("format={RECORD_FORMAT}") => {}
            _ => return Err(RecordError::Format),
        }
        let mut config = TrainConfig::default();
        let mut record = TrainRunRecord::new(TrainConfig::default());
        for (i, raw) in lines {
            let line_no = i + 1;
            let (key, value) = raw.trim().split_once('=').ok_or(RecordError::Malformed(line_no))?;
            if let Some(k) = key.strip_prefix("config.") {
                config.set(k, value)?;
            } else if let Some(rest) = key.strip_prefix("epoch.") {
                let (n, field) = rest.split_once('.').ok_or(RecordError::Malformed(line_no))?;
                let n: usize = n.parse().map_err(|_| RecordError::Malformed(line_no))?;
                let idx = match record.epochs.iter().position(|e| e.epoch == n) {
                    Some(idx) => idx,
                    None => {
                        record.epochs.push(EpochMetrics { epoch: n, ..Default::default() });
                        record.epochs.len() - 1
                    }
                };
                let e = &mut record.epochs[idx];
                let f = || value.parse::<f64>().map_err(|_| RecordError::Malformed(line_no));
                match field {
                    "mean_total" => e.mean_total = f()?,
                    "mean_cvar" => e.mean_cvar = f()?,
                    "mean_auc" => e.mean_auc = f()?,
                    "mean_lambda" => e.mean_lambda = f()?,
                    "lr" => e.lr = f()?,
                    "wall_seconds" => e.wall_seconds = f()?,
                    "single_class_batches" => {
                        e.single_class_batches = value.parse().map_err(|_| RecordError::Malformed(line_no))?
                    }
                    _ => return Err(RecordError::Malformed(line_no)),
                }
            } else {
                match key {
                    "checkpoint" => record.checkpoint = Some(PathBuf::from(value)),
                    "auc_term_disabled" => {
                        record.auc_term_disabled = value.parse().map_err(|_| RecordError::Malformed(line_no))?
                    }
                    "epochs" => {}
                    _ => return Err(RecordError::Malformed(line_no)),
                }
            }
        }
        config.validate()?;
        record.config = config;
        Ok(record)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut r = TrainRunRecord::new(TrainConfig {
            alpha: 0.3,
            seed: 11,
            ..TrainConfig::default()
        });
        r.checkpoint = Some(PathBuf::from("out/model.ckpt"));
        for epoch in 1..=3 {
            r.epochs.push(EpochMetrics {
                epoch,
                mean_total: 0.1 * epoch as f64,
                mean_cvar: 1.0 / 3.0,
                mean_auc: 0.25,
                mean_lambda: -0.0,
                lr: 1e-3,
                wall_seconds: 0.5,
                single_class_batches: epoch,
            });
        }
        let back = TrainRunRecord::from_kv(&r.to_kv()).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.seed(), 11);
    }

    #[test]
    fn rejects_bad_input() {
        assert_eq!(TrainRunRecord::from_kv("alpha=1"), Err(RecordError::Format));
        let text = format!("format={RECORD_FORMAT}\nepoch.x.lr=1\n");
        assert_eq!(TrainRunRecord::from_kv(&text), Err(RecordError::Malformed(2)));
        let text = format!("format={RECORD_FORMAT}\nconfig.bogus=1\n");
        assert!(matches!(TrainRunRecord::from_kv(&text), Err(RecordError::Config(_))));
    }
}
