//! End-to-end training: shuffled mini-batches, per-batch lambda fit, SAM
//! perturbation, and Adam on the perturbed gradient.
//!
//! One optimizer step on a batch:
//!
//! 1. forward with freshly sampled dropout masks (batch statistics);
//! 2. per-example BCE, then bisection for the CVaR `lambda` on the batch;
//! 3. with `lambda` fixed, backpropagate the blended loss and form
//!    `epsilon*` from that gradient;
//! 4. re-run forward/backward at `theta + epsilon*` with the same masks and
//!    the same rows (batch statistics recomputed), `lambda` still fixed;
//! 5. restore `theta` and take an Adam step with the perturbed gradient at
//!    the cosine-scheduled learning rate.
//!
//! Running batch-norm statistics are folded in once per batch, from the
//! clean pass.

mod experiments;
mod landscape;
mod record;

pub use experiments::{
    run_ablation, run_staged_sweep, run_sweep, split_holdout, train_and_evaluate, write_ablation_csv,
    write_sweep_csv, AblationRow, StagedSweep, SweepParam, SweepRow, Variant,
};
pub use landscape::{landscape_directions, landscape_loss, landscape_slice, write_landscape_csv, LandscapeGrid};
pub use record::{EpochMetrics, RecordError, TrainRunRecord};

use std::fmt;
use std::time::Instant;

use ndarray::ArrayView2;
use rand::seq::SliceRandom;
use thiserror::Error;

use crate::bank::{BankError, FeatureBank, Label};
use crate::config::{ConfigError, Objective, TrainConfig};
use crate::losses::{total_loss_logits, LossError, LossReport};
use crate::metrics::MetricsError;
use crate::net::{DropoutMasks, MlpModel, NetError};
use crate::optim::{compute_epsilon, AdamState, LrSchedule, OptimError};
use crate::params::Params;
use crate::rng::{self, Rng};

/// Tags for the independent generator streams derived from the run seed.
pub mod streams {
    pub const INIT: u64 = 1;
    pub const SHUFFLE: u64 = 2;
    pub const DROPOUT: u64 = 3;
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("cannot train on an empty bank")]
    EmptyBank,
    #[error("need at least 2 examples for batch-norm, got {0}")]
    TooFewExamples(usize),
    #[error("AUC loss undefined without both classes ({n_pos} positive, {n_neg} negative)")]
    SingleClass { n_pos: usize, n_neg: usize },
    #[error("bank dimension {bank} does not match model input {model}")]
    DimensionMismatch { bank: usize, model: usize },
    #[error("non-finite loss, training aborted\n{0}")]
    NonFinite(Box<NanDump>),
    #[error("thread pool: {0}")]
    ThreadPool(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Bank(#[from] BankError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// State captured when a loss or gradient goes non-finite.
#[derive(Clone, Debug)]
pub struct NanDump {
    pub epoch: usize,
    pub batch: usize,
    pub step: u64,
    pub lr: f64,
    pub report: Option<LossReport>,
    pub param_l2: f64,
    pub first_bad_param: Option<usize>,
    pub batch_rows: Vec<usize>,
}

impl fmt::Display for NanDump {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "epoch={}", self.epoch)?;
        writeln!(f, "batch={}", self.batch)?;
        writeln!(f, "step={}", self.step)?;
        writeln!(f, "lr={:?}", self.lr)?;
        if let Some(r) = &self.report {
            writeln!(f, "total={:?}", r.total)?;
            writeln!(f, "cvar={:?}", r.cvar_value)?;
            writeln!(f, "lambda={:?}", r.fitted_lambda)?;
            writeln!(f, "auc_term={:?}", r.auc_value)?;
        }
        writeln!(f, "param_l2={:?}", self.param_l2)?;
        if let Some(i) = self.first_bad_param {
            writeln!(f, "first_bad_param={i}")?;
        }
        write!(f, "batch_rows={:?}", self.batch_rows)
    }
}

/// Outcome of one optimizer step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub report: LossReport,
    pub lr: f64,
}

/// Gradient of the blended loss at the model's current parameters, for a
/// fixed batch, fixed dropout masks and (optionally) a fixed CVaR lambda.
pub fn objective_gradient(
    model: &MlpModel,
    x: ArrayView2<f64>,
    labels: &[Label],
    masks: &DropoutMasks,
    objective: &Objective,
    fixed_lambda: Option<f64>,
) -> Result<(LossReport, Params, crate::net::ForwardTrace), TrainError> {
    let trace = model.forward_with_masks(x, masks)?;
    let (report, dlogits) = total_loss_logits(
        trace.logits.as_slice().expect("contiguous logits"),
        labels,
        objective.gamma,
        &objective.cvar,
        &objective.auc,
        fixed_lambda,
    )?;
    let grads = model.backward_logits(&trace, ndarray::ArrayView1::from(&dlogits))?;
    Ok((report, grads, trace))
}

/// Gradient at `theta + epsilon` with the batch, masks and lambda held fixed.
///
/// The model's parameters are restored bit-exactly before returning.
pub fn perturbed_gradient(
    model: &mut MlpModel,
    x: ArrayView2<f64>,
    labels: &[Label],
    masks: &DropoutMasks,
    objective: &Objective,
    lambda: f64,
    epsilon: &Params,
) -> Result<Params, TrainError> {
    let saved = model.params().clone();
    model.params_mut().add_scaled(1.0, epsilon);
    let result = objective_gradient(model, x, labels, masks, objective, Some(lambda));
    model.set_params(saved)?;
    Ok(result?.1)
}

/// Stateful optimizer loop over caller-supplied batches.
pub struct Trainer {
    model: MlpModel,
    adam: AdamState,
    schedule: LrSchedule,
    objective: Objective,
    dropout_rng: Rng,
    step: u64,
}

impl Trainer {
    pub fn new(model: MlpModel, config: &TrainConfig, total_steps: u64) -> Result<Self, TrainError> {
        let objective = config.objective()?;
        let adam = AdamState::new(model.params());
        let mut model = model;
        model.set_mode(crate::net::Mode::Train);
        Ok(Self {
            model,
            adam,
            schedule: LrSchedule::new(config.lr, total_steps, config.schedule)?,
            objective,
            dropout_rng: rng::seeded(rng::derive_seed(config.seed, streams::DROPOUT)),
            step: 0,
        })
    }

    pub fn model(&self) -> &MlpModel {
        &self.model
    }

    pub fn into_model(self) -> MlpModel {
        self.model
    }

    pub fn objective(&self) -> &Objective {
        &self.objective
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, x: ArrayView2<f64>, labels: &[Label]) -> Result<StepOutcome, TrainError> {
        let lr = self.schedule.lr_at(self.step.min(self.schedule.total_steps))?;
        let masks = self.model.sample_masks(x.nrows(), &mut self.dropout_rng);

        let (report, grads, trace) = objective_gradient(&self.model, x, labels, &masks, &self.objective, None)?;
        let dump = |report: Option<LossReport>, model: &MlpModel, bad: Option<usize>| NanDump {
            epoch: 0,
            batch: 0,
            step: self.step,
            lr,
            report,
            param_l2: model.params().l2_norm(),
            first_bad_param: bad,
            batch_rows: Vec::new(),
        };
        if !report.total.is_finite() {
            return Err(TrainError::NonFinite(Box::new(dump(Some(report), &self.model, None))));
        }
        // Lambda is fitted once here and reused at the perturbed point.
        let lambda = report.fitted_lambda;
        self.model.update_running_stats(&trace)?;

        let update = match &self.objective.sam {
            Some(sam) => {
                let eps = compute_epsilon(&grads, sam)?;
                perturbed_gradient(&mut self.model, x, labels, &masks, &self.objective, lambda, &eps)?
            }
            None => grads,
        };
        if let Some(bad) = update.first_non_finite() {
            return Err(TrainError::NonFinite(Box::new(dump(Some(report), &self.model, Some(bad)))));
        }
        self.adam.step(self.model.params_mut(), &update, lr)?;
        self.step += 1;
        Ok(StepOutcome { report, lr })
    }
}

/// Mini-batch partition of a shuffled index list.
///
/// A trailing batch of one row is merged into the previous batch because
/// batch-norm needs two rows for a variance.
pub fn partition_batches(order: &[usize], batch_size: usize) -> Vec<&[usize]> {
    let mut batches: Vec<&[usize]> = order.chunks(batch_size).collect();
    if batches.len() >= 2 && batches.last().is_some_and(|b| b.len() == 1) {
        batches.pop();
        let start = (batches.len() - 1) * batch_size;
        *batches.last_mut().expect("at least one batch") = &order[start..];
    }
    batches
}

pub fn num_batches(n: usize, batch_size: usize) -> usize {
    partition_batches(&(0..n).collect::<Vec<_>>(), batch_size).len()
}

/// Fresh model for a bank under `config`, initialized from the run seed.
pub fn init_model(dim: usize, config: &TrainConfig) -> Result<MlpModel, TrainError> {
    let mut init_rng = rng::seeded(rng::derive_seed(config.seed, streams::INIT));
    Ok(MlpModel::init(dim, config.hidden, config.dropout_rate, &mut init_rng)?)
}

pub fn train(bank: &FeatureBank, config: &TrainConfig) -> Result<(MlpModel, TrainRunRecord), TrainError> {
    train_with_progress(bank, config, |_| {})
}

/// Trains from a fresh initialization, calling `on_epoch` after every epoch.
pub fn train_with_progress(
    bank: &FeatureBank,
    config: &TrainConfig,
    on_epoch: impl FnMut(&EpochMetrics),
) -> Result<(MlpModel, TrainRunRecord), TrainError> {
    let model = init_model(bank.dim(), config)?;
    train_from(model, bank, config, on_epoch)
}

/// Trains a given starting model.
pub fn train_from(
    model: MlpModel,
    bank: &FeatureBank,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<(MlpModel, TrainRunRecord), TrainError> {
    config.validate()?;
    if bank.is_empty() {
        return Err(TrainError::EmptyBank);
    }
    if bank.len() < 2 {
        return Err(TrainError::TooFewExamples(bank.len()));
    }
    if model.input_dim() != bank.dim() {
        return Err(TrainError::DimensionMismatch {
            bank: bank.dim(),
            model: model.input_dim(),
        });
    }
    let objective = config.objective()?;
    let counts = bank.class_counts();
    if objective.gamma == 0.0 && !counts.has_both() {
        return Err(TrainError::SingleClass {
            n_pos: counts.n_pos,
            n_neg: counts.n_neg,
        });
    }

    let per_epoch = num_batches(bank.len(), config.batch_size) as u64;
    let total_steps = per_epoch * config.max_iterations as u64;
    let mut trainer = Trainer::new(model, config, total_steps)?;
    let mut shuffle_rng = rng::seeded(rng::derive_seed(config.seed, streams::SHUFFLE));
    let labels = bank.labels();
    let mut order: Vec<usize> = (0..bank.len()).collect();
    let mut record = TrainRunRecord::new(config.clone());
    record.auc_term_disabled = objective.gamma < 1.0 && !counts.has_both();

    for epoch in 1..=config.max_iterations {
        let started = Instant::now();
        order.shuffle(&mut shuffle_rng);
        let mut acc = EpochMetrics {
            epoch,
            ..EpochMetrics::default()
        };
        let batches = partition_batches(&order, config.batch_size);
        for (b, rows) in batches.iter().enumerate() {
            let x = bank.gather(rows);
            let y: Vec<Label> = rows.iter().map(|&i| labels[i]).collect();
            let outcome = trainer.step(x.view(), &y).map_err(|e| match e {
                TrainError::NonFinite(mut dump) => {
                    dump.epoch = epoch;
                    dump.batch = b + 1;
                    dump.batch_rows = rows.to_vec();
                    TrainError::NonFinite(dump)
                }
                other => other,
            })?;
            let r = outcome.report;
            acc.mean_total += r.total;
            acc.mean_cvar += r.cvar_value;
            acc.mean_auc += r.auc_value;
            acc.mean_lambda += r.fitted_lambda;
            acc.lr = outcome.lr;
            if r.n_pairs == 0 {
                acc.single_class_batches += 1;
            }
        }
        let nb = batches.len() as f64;
        acc.mean_total /= nb;
        acc.mean_cvar /= nb;
        acc.mean_auc /= nb;
        acc.mean_lambda /= nb;
        acc.wall_seconds = started.elapsed().as_secs_f64();
        on_epoch(&acc);
        record.epochs.push(acc);
    }

    let mut model = trainer.into_model();
    model.set_mode(crate::net::Mode::Eval);
    Ok((model, record))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bank::generate_synthetic;

    fn small_config() -> TrainConfig {
        TrainConfig {
            hidden: 6,
            batch_size: 8,
            max_iterations: 2,
            seed: 3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn batches_merge_a_trailing_singleton() {
        let order: Vec<usize> = (0..17).collect();
        let b = partition_batches(&order, 8);
        assert_eq!(b.iter().map(|s| s.len()).collect::<Vec<_>>(), vec![8, 9]);
        let order: Vec<usize> = (0..18).collect();
        let b = partition_batches(&order, 8);
        assert_eq!(b.iter().map(|s| s.len()).collect::<Vec<_>>(), vec![8, 8, 2]);
        assert_eq!(num_batches(1000, 32), 32);
        assert_eq!(num_batches(2, 32), 1);
    }

    #[test]
    fn zero_learning_rate_keeps_initial_weights() {
        let bank = generate_synthetic(10, 10, 4, 2.0, 1).unwrap();
        let cfg = TrainConfig { lr: 0.0, ..small_config() };
        let init = init_model(4, &cfg).unwrap();
        let (model, record) = train(&bank, &cfg).unwrap();
        assert!(model.params().bit_eq(init.params()));
        assert_eq!(record.epochs.len(), 2);
    }

    #[test]
    fn rejects_degenerate_banks() {
        let cfg = small_config();
        let one = generate_synthetic(1, 0, 3, 1.0, 1).unwrap();
        assert!(matches!(train(&one, &cfg), Err(TrainError::TooFewExamples(1))));
        let neg_only = generate_synthetic(0, 6, 3, 1.0, 1).unwrap();
        let auc_only = TrainConfig {
            ablation: crate::config::Ablation { use_cvar: false, use_auc: true, use_sam: false },
            ..cfg.clone()
        };
        assert!(matches!(train(&neg_only, &auc_only), Err(TrainError::SingleClass { .. })));
        let (_, record) = train(&neg_only, &cfg).unwrap();
        assert!(record.auc_term_disabled);
        assert!(record.epochs.iter().all(|e| e.single_class_batches == 1));
    }

    #[test]
    fn lambda_stays_inside_batch_loss_range() {
        let bank = generate_synthetic(12, 20, 3, 1.0, 5).unwrap();
        let cfg = small_config();
        let mut trainer = Trainer::new(init_model(3, &cfg).unwrap(), &cfg, 10).unwrap();
        let order: Vec<usize> = (0..bank.len()).collect();
        for rows in partition_batches(&order, 8) {
            let x = bank.gather(rows);
            let y: Vec<Label> = rows.iter().map(|&i| bank.examples()[i].label).collect();
            // Recompute the clean BCE before the step consumes the masks.
            let out = trainer.step(x.view(), &y).unwrap();
            assert!(out.report.fitted_lambda.is_finite());
            assert!(out.report.cvar_value >= out.report.fitted_lambda);
        }
    }

    #[test]
    fn nan_dump_renders_key_values() {
        let d = NanDump {
            epoch: 2,
            batch: 5,
            step: 37,
            lr: 1e-3,
            report: None,
            param_l2: f64::NAN,
            first_bad_param: Some(4),
            batch_rows: vec![1, 2],
        };
        let text = d.to_string();
        assert!(text.contains("epoch=2") && text.contains("first_bad_param=4"));
    }
}
