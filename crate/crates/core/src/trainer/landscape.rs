//! Two-dimensional slices of the loss surface around trained parameters.
//!
//! Directions are Gaussian and filter-normalized: every row of every weight
//! matrix (one output unit) is rescaled to the norm of the matching row of
//! `theta`. Biases and batch-norm scale/shift get a zero direction. The
//! loss at each lattice point is the eval-mode total loss over the whole
//! bank, with the CVaR lambda re-fitted per point.

use std::io::{self, Write};

use ndarray::{Array2, Axis};
use rand_distr::{Distribution, StandardNormal};

use super::TrainError;
use crate::bank::FeatureBank;
use crate::config::TrainConfig;
use crate::losses::total_loss_logits;
use crate::net::MlpModel;
use crate::params::Params;
use crate::rng::{self, Rng};

#[derive(Clone, Debug, PartialEq)]
pub struct LandscapeGrid {
    /// Lattice coordinates shared by both axes, ascending.
    pub coords: Vec<f64>,
    /// `losses[[i, j]]` is the loss at `(coords[i], coords[j])`.
    pub losses: Array2<f64>,
    pub center_loss: f64,
}

impl LandscapeGrid {
    pub fn grid(&self) -> usize {
        self.coords.len()
    }

    /// `(a, b, loss)` triples in row-major order.
    pub fn points(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.losses
            .indexed_iter()
            .map(|((i, j), &l)| (self.coords[i], self.coords[j], l))
    }
}

fn random_direction(theta: &Params, rng: &mut Rng) -> Params {
    let mut d = theta.zeros_like();
    for (dl, tl) in d.linears.iter_mut().zip(&theta.linears) {
        for (mut drow, trow) in dl.weight.axis_iter_mut(Axis(0)).zip(tl.weight.axis_iter(Axis(0))) {
            drow.iter_mut().for_each(|v| *v = StandardNormal.sample(rng));
            let dn = drow.dot(&drow).sqrt();
            let tn = trow.dot(&trow).sqrt();
            if dn > 0.0 {
                drow *= tn / dn;
            }
        }
    }
    d
}

/// The two directions used by [`landscape_slice`] for `seed`.
pub fn landscape_directions(theta: &Params, seed: u64) -> (Params, Params) {
    let mut r = rng::seeded(seed);
    let d1 = random_direction(theta, &mut r);
    let d2 = random_direction(theta, &mut r);
    (d1, d2)
}

/// Eval-mode total loss of `model` over every example of `bank`.
pub fn landscape_loss(model: &MlpModel, bank: &FeatureBank, config: &TrainConfig) -> Result<f64, TrainError> {
    let objective = config.objective()?;
    let logits = model.logits_eval(bank.features().view())?;
    let (report, _) = total_loss_logits(
        logits.as_slice().expect("contiguous logits"),
        &bank.labels(),
        objective.gamma,
        &objective.cvar,
        &objective.auc,
        None,
    )?;
    Ok(report.total)
}

/// Symmetric lattice on `[-radius, radius]`; odd grids contain 0 exactly.
fn lattice(grid: usize, radius: f64) -> Vec<f64> {
    let g = (grid - 1) as f64;
    (0..grid)
        .map(|k| radius * ((2.0 * k as f64 - g) / g))
        .collect()
}

pub fn landscape_slice(
    model: &MlpModel,
    bank: &FeatureBank,
    config: &TrainConfig,
    grid: usize,
    radius: f64,
    seed: u64,
) -> Result<LandscapeGrid, TrainError> {
    if grid < 2 {
        return Err(TrainError::Config(crate::config::ConfigError::Invalid(format!(
            "landscape grid must be >= 2, got {grid}"
        ))));
    }
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(TrainError::Config(crate::config::ConfigError::Invalid(format!(
            "landscape radius must be positive, got {radius}"
        ))));
    }
    if bank.is_empty() {
        return Err(TrainError::EmptyBank);
    }
    let theta = model.params();
    let (d1, d2) = landscape_directions(theta, seed);
    let coords = lattice(grid, radius);
    let mut probe = model.clone();
    let mut losses = Array2::zeros((grid, grid));
    for (i, &a) in coords.iter().enumerate() {
        for (j, &b) in coords.iter().enumerate() {
            let mut p = theta.clone();
            if a != 0.0 {
                p.add_scaled(a, &d1);
            }
            if b != 0.0 {
                p.add_scaled(b, &d2);
            }
            probe.set_params(p)?;
            losses[[i, j]] = landscape_loss(&probe, bank, config)?;
        }
    }
    let center_loss = landscape_loss(model, bank, config)?;
    Ok(LandscapeGrid {
        coords,
        losses,
        center_loss,
    })
}

pub fn write_landscape_csv<W: Write + ?Sized>(grid: &LandscapeGrid, w: &mut W) -> io::Result<()> {
    writeln!(w, "a,b,loss")?;
    for (a, b, l) in grid.points() {
        writeln!(w, "{a:?},{b:?},{l:?}")?;
    }
    Ok(())
}
