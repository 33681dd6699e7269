//! Training configuration and its flat `key=value` text form.
//!
//! One `key=value` per line; blank lines and `#` comments are ignored.
//! Unknown keys are rejected so typos cannot silently fall back to defaults.

use std::fmt::Write as _;

use thiserror::Error;

use crate::losses::{AucConfig, CvarConfig};
use crate::optim::{SamConfig, SamVariant, ScheduleKind};

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected key=value, found {text:?}")]
    Syntax { line: usize, text: String },
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("bad value {value:?} for {key}: {reason}")]
    BadValue { key: String, value: String, reason: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Ablation {
    pub use_cvar: bool,
    pub use_auc: bool,
    pub use_sam: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Self {
            use_cvar: true,
            use_auc: true,
            use_sam: true,
        }
    }
}

/// Every knob of a training run. Defaults:
/// batch 32, Adam at 1e-3 with cosine annealing, `delta = 0.05`,
/// `eta = 0.6`, `p = 2`, `alpha = 0.8`, `gamma = 0.5`, hidden width 1536.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub eta: f64,
    pub p: f64,
    pub delta: f64,
    pub lr: f64,
    pub batch_size: usize,
    /// Epochs.
    pub max_iterations: usize,
    pub seed: u64,
    pub ablation: Ablation,
    pub dropout_rate: f64,
    pub sam_variant: SamVariant,
    pub hidden: usize,
    pub schedule: ScheduleKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 0.8,
            gamma: 0.5,
            eta: 0.6,
            p: 2.0,
            delta: 0.05,
            lr: 1e-3,
            batch_size: 32,
            max_iterations: 50,
            seed: 0,
            ablation: Ablation::default(),
            dropout_rate: 0.1,
            sam_variant: SamVariant::Sign,
            hidden: 1536,
            schedule: ScheduleKind::Cosine,
        }
    }
}

/// The objective actually optimized once ablation toggles are applied.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Objective {
    pub gamma: f64,
    pub cvar: CvarConfig,
    pub auc: AucConfig,
    pub sam: Option<SamConfig>,
}

pub const KEYS: &[&str] = &[
    "alpha",
    "gamma",
    "eta",
    "p",
    "delta",
    "lr",
    "batch_size",
    "max_iterations",
    "seed",
    "use_cvar",
    "use_auc",
    "use_sam",
    "dropout_rate",
    "sam_variant",
    "hidden",
    "schedule",
];

fn bad(key: &str, value: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
        reason: reason.into(),
    }
}

fn parse_f64(key: &str, value: &str) -> Result<f64, ConfigError> {
    let v: f64 = value.parse().map_err(|_| bad(key, value, "not a number"))?;
    if !v.is_finite() {
        return Err(bad(key, value, "not finite"));
    }
    Ok(v)
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(bad(key, value, "expected true/false")),
    }
}

fn parse_usize(key: &str, value: &str) -> Result<usize, ConfigError> {
    value.parse().map_err(|_| bad(key, value, "expected a non-negative integer"))
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return invalid(format!("alpha {} not in (0, 1]", self.alpha));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return invalid(format!("gamma {} not in [0, 1]", self.gamma));
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return invalid(format!("eta {} not in (0, 1]", self.eta));
        }
        if !(self.p > 1.0) {
            return invalid(format!("p {} must exceed 1", self.p));
        }
        if !(self.delta > 0.0) {
            return invalid(format!("delta {} must be positive", self.delta));
        }
        if !(self.lr >= 0.0) {
            return invalid(format!("lr {} must be >= 0", self.lr));
        }
        if self.batch_size < 2 {
            return invalid("batch_size must be at least 2 (batch-norm)".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return invalid(format!("dropout_rate {} not in [0, 1)", self.dropout_rate));
        }
        if self.hidden == 0 {
            return invalid("hidden width must be positive".into());
        }
        Ok(())
    }

    /// Applies ablation toggles: no CVaR means mean BCE (`alpha = 1`), no AUC
    /// means `gamma = 1`, AUC without CVaR means `gamma = 0`, no SAM means no
    /// perturbation.
    pub fn objective(&self) -> Result<Objective, ConfigError> {
        self.validate()?;
        let Ablation {
            use_cvar,
            use_auc,
            use_sam,
        } = self.ablation;
        let alpha = if use_cvar { self.alpha } else { 1.0 };
        let gamma = match (use_cvar, use_auc) {
            (_, false) => 1.0,
            (false, true) => 0.0,
            (true, true) => self.gamma,
        };
        let map = |e: crate::losses::LossError| ConfigError::Invalid(e.to_string());
        Ok(Objective {
            gamma,
            cvar: CvarConfig::new(alpha).map_err(map)?,
            auc: AucConfig::new(self.eta, self.p).map_err(map)?,
            sam: if use_sam {
                Some(SamConfig::new(self.delta, self.sam_variant).map_err(|e| ConfigError::Invalid(e.to_string()))?)
            } else {
                None
            },
        })
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let value = value.trim();
        match key.trim() {
            "alpha" => self.alpha = parse_f64(key, value)?,
            "gamma" => self.gamma = parse_f64(key, value)?,
            "eta" => self.eta = parse_f64(key, value)?,
            "p" => self.p = parse_f64(key, value)?,
            "delta" => self.delta = parse_f64(key, value)?,
            "lr" => self.lr = parse_f64(key, value)?,
            "batch_size" => self.batch_size = parse_usize(key, value)?,
            "max_iterations" | "epochs" => self.max_iterations = parse_usize(key, value)?,
            "seed" => self.seed = value.parse().map_err(|_| bad(key, value, "expected a u64"))?,
            "use_cvar" => self.ablation.use_cvar = parse_bool(key, value)?,
            "use_auc" => self.ablation.use_auc = parse_bool(key, value)?,
            "use_sam" => self.ablation.use_sam = parse_bool(key, value)?,
            "dropout_rate" => self.dropout_rate = parse_f64(key, value)?,
            "sam_variant" => {
                self.sam_variant = match value {
                    "sign" => SamVariant::Sign,
                    "l2" | "l2_normalized" => SamVariant::L2Normalized,
                    _ => return Err(bad(key, value, "expected sign or l2_normalized")),
                }
            }
            "hidden" => self.hidden = parse_usize(key, value)?,
            "schedule" => {
                self.schedule = match value {
                    "cosine" => ScheduleKind::Cosine,
                    "constant" => ScheduleKind::Constant,
                    _ => return Err(bad(key, value, "expected cosine or constant")),
                }
            }
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    /// Applies a single `key=value` override.
    pub fn apply_override(&mut self, kv: &str) -> Result<(), ConfigError> {
        let (k, v) = kv.split_once('=').ok_or_else(|| ConfigError::Syntax {
            line: 0,
            text: kv.to_string(),
        })?;
        self.set(k, v)
    }

    /// Overlays the settings in `text` onto `self`.
    pub fn merge_kv(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: i + 1,
                text: raw.to_string(),
            })?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn from_kv(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        cfg.merge_kv(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Value of `key` rendered so that `set(key, value)` restores it exactly.
    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "alpha" => format!("{:?}", self.alpha),
            "gamma" => format!("{:?}", self.gamma),
            "eta" => format!("{:?}", self.eta),
            "p" => format!("{:?}", self.p),
            "delta" => format!("{:?}", self.delta),
            "lr" => format!("{:?}", self.lr),
            "batch_size" => self.batch_size.to_string(),
            "max_iterations" => self.max_iterations.to_string(),
            "seed" => self.seed.to_string(),
            "use_cvar" => self.ablation.use_cvar.to_string(),
            "use_auc" => self.ablation.use_auc.to_string(),
            "use_sam" => self.ablation.use_sam.to_string(),
            "dropout_rate" => format!("{:?}", self.dropout_rate),
            "sam_variant" => match self.sam_variant {
                SamVariant::Sign => "sign".into(),
                SamVariant::L2Normalized => "l2_normalized".into(),
            },
            "hidden" => self.hidden.to_string(),
            "schedule" => match self.schedule {
                ScheduleKind::Cosine => "cosine".into(),
                ScheduleKind::Constant => "constant".into(),
            },
            _ => return None,
        })
    }

    /// Serializes every key, optionally prefixed (e.g. `config.`).
    pub fn to_kv_prefixed(&self, prefix: &str) -> String {
        let mut out = String::new();
        for key in KEYS {
            let _ = writeln!(out, "{prefix}{key}={}", self.get(key).expect("known key"));
        }
        out
    }

    pub fn to_kv(&self) -> String {
        self.to_kv_prefixed("")
    }
}
