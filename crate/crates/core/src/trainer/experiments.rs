//! Ablation tables and one-dimensional hyperparameter sweeps.
//!
//! Every run in a table shares the seed, the training bank and the
//! held-out bank, so rows differ only in the knob being varied. Runs are
//! independent and execute on a rayon pool of `jobs` threads; results come
//! back in input order regardless of scheduling.

use std::fmt;
use std::io::{self, Write};

use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::{train, TrainError};
use crate::bank::FeatureBank;
use crate::config::{Ablation, TrainConfig};
use crate::metrics::evaluate;
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    CvarOnly,
    AucOnly,
    CvarAuc,
    CvarSam,
    Full,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::CvarOnly,
        Variant::AucOnly,
        Variant::CvarAuc,
        Variant::CvarSam,
        Variant::Full,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::CvarOnly => "V1",
            Variant::AucOnly => "V2",
            Variant::CvarAuc => "V3",
            Variant::CvarSam => "V4",
            Variant::Full => "full",
        }
    }

    pub fn ablation(self) -> Ablation {
        let (use_cvar, use_auc, use_sam) = match self {
            Variant::CvarOnly => (true, false, false),
            Variant::AucOnly => (false, true, false),
            Variant::CvarAuc => (true, true, false),
            Variant::CvarSam => (true, false, true),
            Variant::Full => (true, true, true),
        };
        Ablation {
            use_cvar,
            use_auc,
            use_sam,
        }
    }

    pub fn apply(self, base: &TrainConfig) -> TrainConfig {
        TrainConfig {
            ablation: self.ablation(),
            ..base.clone()
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub variant: Variant,
    pub ablation: Ablation,
    pub auc: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepParam {
    Alpha,
    Gamma,
}

impl SweepParam {
    pub fn key(self) -> &'static str {
        match self {
            SweepParam::Alpha => "alpha",
            SweepParam::Gamma => "gamma",
        }
    }

    pub fn apply(self, base: &TrainConfig, value: f64) -> TrainConfig {
        let mut cfg = base.clone();
        match self {
            SweepParam::Alpha => cfg.alpha = value,
            SweepParam::Gamma => cfg.gamma = value,
        }
        cfg
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub auc: f64,
}

/// Trains on `train_bank` and returns the exact AUC on `heldout`.
pub fn train_and_evaluate(
    train_bank: &FeatureBank,
    heldout: &FeatureBank,
    config: &TrainConfig,
) -> Result<f64, TrainError> {
    let (model, _) = train(train_bank, config)?;
    Ok(evaluate(&model, heldout)?.auc)
}

fn run_all(
    train_bank: &FeatureBank,
    heldout: &FeatureBank,
    configs: &[TrainConfig],
    jobs: usize,
) -> Result<Vec<f64>, TrainError> {
    for cfg in configs {
        cfg.validate()?;
    }
    let counts = train_bank.class_counts();
    if !counts.has_both() {
        return Err(TrainError::SingleClass {
            n_pos: counts.n_pos,
            n_neg: counts.n_neg,
        });
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| TrainError::ThreadPool(e.to_string()))?;
    pool.install(|| {
        configs
            .par_iter()
            .map(|cfg| train_and_evaluate(train_bank, heldout, cfg))
            .collect()
    })
}

/// The five ablation variants, in table order.
pub fn run_ablation(
    train_bank: &FeatureBank,
    heldout: &FeatureBank,
    base: &TrainConfig,
    jobs: usize,
) -> Result<Vec<AblationRow>, TrainError> {
    let configs: Vec<TrainConfig> = Variant::ALL.iter().map(|v| v.apply(base)).collect();
    let aucs = run_all(train_bank, heldout, &configs, jobs)?;
    Ok(Variant::ALL
        .iter()
        .zip(aucs)
        .map(|(&variant, auc)| AblationRow {
            variant,
            ablation: variant.ablation(),
            auc,
        })
        .collect())
}

pub fn run_sweep(
    train_bank: &FeatureBank,
    heldout: &FeatureBank,
    base: &TrainConfig,
    param: SweepParam,
    values: &[f64],
    jobs: usize,
) -> Result<Vec<SweepRow>, TrainError> {
    let configs: Vec<TrainConfig> = values.iter().map(|&v| param.apply(base, v)).collect();
    let aucs = run_all(train_bank, heldout, &configs, jobs)?;
    Ok(values
        .iter()
        .zip(aucs)
        .map(|(&value, auc)| SweepRow { value, auc })
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct StagedSweep {
    pub alpha_rows: Vec<SweepRow>,
    pub best_alpha: f64,
    pub gamma_rows: Vec<SweepRow>,
    pub best_gamma: f64,
}

fn best(rows: &[SweepRow]) -> f64 {
    // First maximum wins, so ties resolve to the earlier value.
    rows.iter()
        .fold(None::<SweepRow>, |acc, r| match acc {
            Some(b) if b.auc >= r.auc => Some(b),
            _ => Some(*r),
        })
        .map(|r| r.value)
        .unwrap_or(f64::NAN)
}

/// Sweeps alpha, fixes the best alpha, then sweeps gamma.
pub fn run_staged_sweep(
    train_bank: &FeatureBank,
    heldout: &FeatureBank,
    base: &TrainConfig,
    alphas: &[f64],
    gammas: &[f64],
    jobs: usize,
) -> Result<StagedSweep, TrainError> {
    let alpha_rows = run_sweep(train_bank, heldout, base, SweepParam::Alpha, alphas, jobs)?;
    let best_alpha = best(&alpha_rows);
    let stage2 = SweepParam::Alpha.apply(base, best_alpha);
    let gamma_rows = run_sweep(train_bank, heldout, &stage2, SweepParam::Gamma, gammas, jobs)?;
    let best_gamma = best(&gamma_rows);
    Ok(StagedSweep {
        alpha_rows,
        best_alpha,
        gamma_rows,
        best_gamma,
    })
}

/// Stratified random split: `fraction` of each class goes to the second bank.
pub fn split_holdout(bank: &FeatureBank, fraction: f64, seed: u64) -> (FeatureBank, FeatureBank) {
    let mut r = rng::seeded(seed);
    let (mut pos, mut neg): (Vec<usize>, Vec<usize>) =
        (0..bank.len()).partition(|&i| bank.examples()[i].label.is_positive());
    pos.shuffle(&mut r);
    neg.shuffle(&mut r);
    let mut keep = Vec::new();
    let mut held = Vec::new();
    for class in [pos, neg] {
        let k = (class.len() as f64 * fraction).round() as usize;
        held.extend_from_slice(&class[..k]);
        keep.extend_from_slice(&class[k..]);
    }
    keep.sort_unstable();
    held.sort_unstable();
    (bank.subset(&keep), bank.subset(&held))
}

pub fn write_sweep_csv<W: Write + ?Sized>(param: SweepParam, rows: &[SweepRow], w: &mut W) -> io::Result<()> {
    writeln!(w, "{},auc", param.key())?;
    for r in rows {
        writeln!(w, "{:?},{:?}", r.value, r.auc)?;
    }
    Ok(())
}

pub fn write_ablation_csv<W: Write + ?Sized>(rows: &[AblationRow], w: &mut W) -> io::Result<()> {
    writeln!(w, "variant,use_cvar,use_auc,use_sam,auc")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{:?}",
            r.variant, r.ablation.use_cvar, r.ablation.use_auc, r.ablation.use_sam, r.auc
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bank::generate_synthetic;

    fn tiny() -> TrainConfig {
        TrainConfig {
            hidden: 8,
            batch_size: 16,
            max_iterations: 2,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn variants_cover_the_table() {
        let names: Vec<&str> = Variant::ALL.iter().map(|v| v.name()).collect();
        assert_eq!(names, ["V1", "V2", "V3", "V4", "full"]);
        assert_eq!(Variant::Full.ablation(), Ablation::default());
        assert!(!Variant::CvarSam.ablation().use_auc);
    }

    #[test]
    fn sweep_single_value_matches_direct_run() {
        let train_bank = generate_synthetic(20, 20, 4, 1.0, 1).unwrap();
        let heldout = generate_synthetic(10, 10, 4, 1.0, 2).unwrap();
        let base = tiny();
        let rows = run_sweep(&train_bank, &heldout, &base, SweepParam::Gamma, &[0.5], 1).unwrap();
        let direct = train_and_evaluate(&train_bank, &heldout, &base).unwrap();
        assert_eq!(rows, vec![SweepRow { value: 0.5, auc: direct }]);
    }

    #[test]
    fn parallel_jobs_do_not_change_results() {
        let train_bank = generate_synthetic(12, 12, 3, 1.0, 4).unwrap();
        let heldout = generate_synthetic(6, 6, 3, 1.0, 5).unwrap();
        let a = run_ablation(&train_bank, &heldout, &tiny(), 1).unwrap();
        let b = run_ablation(&train_bank, &heldout, &tiny(), 3).unwrap();
        assert_eq!(a.len(), 5);
        assert_eq!(a, b);
    }

    #[test]
    fn ablation_needs_both_classes() {
        let one_class = generate_synthetic(0, 10, 3, 1.0, 4).unwrap();
        let err = run_ablation(&one_class, &one_class, &tiny(), 1).unwrap_err();
        assert!(matches!(err, TrainError::SingleClass { .. }));
    }

    #[test]
    fn best_prefers_first_maximum() {
        let rows = [
            SweepRow { value: 0.1, auc: 0.9 },
            SweepRow { value: 0.2, auc: 0.95 },
            SweepRow { value: 0.3, auc: 0.95 },
        ];
        assert_eq!(best(&rows), 0.2);
    }

    #[test]
    fn holdout_is_stratified_and_disjoint() {
        let bank = generate_synthetic(40, 60, 2, 1.0, 9).unwrap();
        let (keep, held) = split_holdout(&bank, 0.25, 1);
        assert_eq!(held.class_counts().n_pos, 10);
        assert_eq!(held.class_counts().n_neg, 15);
        assert_eq!(keep.len() + held.len(), 100);
    }

    #[test]
    fn csv_headers() {
        let mut out = Vec::new();
        write_sweep_csv(SweepParam::Alpha, &[SweepRow { value: 0.1, auc: 1.0 }], &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "alpha,auc\n0.1,1.0\n");
        let mut out = Vec::new();
        let row = AblationRow {
            variant: Variant::AucOnly,
            ablation: Variant::AucOnly.ablation(),
            auc: 0.5,
        };
        write_ablation_csv(&[row], &mut out).unwrap();
        assert!(String::from_utf8(out).unwrap().ends_with("V2,false,true,false,0.5\n"));
    }
}
