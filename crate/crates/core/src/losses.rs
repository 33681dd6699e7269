//! Per-example BCE, the CVaR tail loss, the pairwise AUC surrogate, and
//! their blend, each with exact gradients.
//!
//! CVaR is `min_lambda lambda + 1/(alpha n) * sum_i [l_i - lambda]_+`. The
//! minimizer is found by bisection on the subgradient sign and then snapped
//! onto the loss value where the subgradient changes sign, so `lambda*` is
//! always one of the losses (the lower end of the optimal set).
//!
//! Gradients treat `lambda` as fixed. Losses strictly above `lambda` get
//! weight `1/(alpha n)`, losses below get 0, and the `m` losses exactly at
//! `lambda` share the residual mass `(alpha n - #above) / (alpha n)`. At the
//! optimum this is the true derivative of the CVaR value whenever `alpha n`
//! is fractional; when it is an integer the residual is 0; with `alpha = 1`
//! it gives every loss `1/n`.

use thiserror::Error;

use crate::bank::Label;
use crate::net::sigmoid;

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before `ln`.
pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("empty loss vector")]
    Empty,
    #[error("AUC loss undefined without both classes ({n_pos} positive, {n_neg} negative)")]
    SingleClass { n_pos: usize, n_neg: usize },
    #[error("non-finite input at index {0}")]
    NonFinite(usize),
    #[error("length mismatch: {0} scores, {1} labels")]
    LengthMismatch(usize, usize),
    #[error("invalid loss configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LambdaSearch {
    /// Bracket width, relative to `max(1, |max loss|)`, at which bisection stops.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for LambdaSearch {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iter: 200,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CvarConfig {
    pub alpha: f64,
    pub search: LambdaSearch,
}

impl CvarConfig {
    pub fn new(alpha: f64) -> Result<Self, LossError> {
        let cfg = Self {
            alpha,
            search: LambdaSearch::default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), LossError> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(LossError::InvalidConfig(format!("alpha {} not in (0, 1]", self.alpha)));
        }
        if !(self.search.tol > 0.0) || self.search.max_iter == 0 {
            return Err(LossError::InvalidConfig("lambda search needs tol > 0 and max_iter > 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AucConfig {
    pub eta: f64,
    pub p: f64,
}

impl AucConfig {
    pub fn new(eta: f64, p: f64) -> Result<Self, LossError> {
        let cfg = Self { eta, p };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), LossError> {
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(LossError::InvalidConfig(format!("eta {} not in (0, 1]", self.eta)));
        }
        if !(self.p > 1.0 && self.p.is_finite()) {
            return Err(LossError::InvalidConfig(format!("p {} must exceed 1", self.p)));
        }
        Ok(())
    }
}

impl Default for AucConfig {
    fn default() -> Self {
        Self { eta: 0.6, p: 2.0 }
    }
}

/// Per-batch loss decomposition.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossReport {
    pub cvar_value: f64,
    pub fitted_lambda: f64,
    pub auc_value: f64,
    pub total: f64,
    pub gamma: f64,
    /// Positive-negative pairs in the batch; 0 means the AUC term was skipped.
    pub n_pairs: usize,
}

pub fn bce_per_example(prob: f64, label: Label) -> f64 {
    let p = prob.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    match label {
        Label::Generated => -p.ln(),
        Label::Real => -(1.0 - p).ln(),
    }
}

/// BCE computed from a logit: `softplus(z) - y z`.
pub fn bce_from_logit(logit: f64, label: Label) -> f64 {
    let softplus = logit.max(0.0) + (-logit.abs()).exp().ln_1p();
    softplus - label.as_f64() * logit
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CvarFit {
    pub lambda: f64,
    pub value: f64,
}

fn check_losses(losses: &[f64]) -> Result<(), LossError> {
    if losses.is_empty() {
        return Err(LossError::Empty);
    }
    if let Some(i) = losses.iter().position(|l| !l.is_finite()) {
        return Err(LossError::NonFinite(i));
    }
    Ok(())
}

fn count_above(losses: &[f64], lambda: f64) -> usize {
    losses.iter().filter(|&&l| l > lambda).count()
}

/// `phi(lambda) = lambda + 1/(alpha n) * sum_i [l_i - lambda]_+`.
pub fn cvar_objective(losses: &[f64], alpha: f64, lambda: f64) -> f64 {
    let an = alpha * losses.len() as f64;
    lambda + losses.iter().map(|&l| (l - lambda).max(0.0)).sum::<f64>() / an
}

/// Minimizer and minimum of the CVaR objective.
///
/// `alpha = 1` short-circuits to `(min loss, mean loss)`.
pub fn cvar_lambda_star(losses: &[f64], cfg: &CvarConfig) -> Result<CvarFit, LossError> {
    check_losses(losses)?;
    cfg.validate()?;
    let n = losses.len() as f64;
    let min = losses.iter().copied().fold(f64::INFINITY, f64::min);
    let max = losses.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if cfg.alpha == 1.0 {
        return Ok(CvarFit {
            lambda: min,
            value: losses.iter().sum::<f64>() / n,
        });
    }

    let an = cfg.alpha * n;
    // The right subgradient 1 - #(l > lambda)/(alpha n) is non-negative.
    let right_slope_ok = |lambda: f64| count_above(losses, lambda) as f64 <= an;

    let lambda = if right_slope_ok(min) {
        min
    } else {
        // Invariant: !ok(lo), ok(hi). ok(max) holds because #(l > max) = 0.
        let (mut lo, mut hi) = (min, max);
        let width_tol = cfg.search.tol * max.abs().max(1.0);
        let mut iter = 0;
        while hi - lo > width_tol && iter < cfg.search.max_iter {
            let mid = lo + 0.5 * (hi - lo);
            if mid <= lo || mid >= hi {
                break;
            }
            if right_slope_ok(mid) {
                hi = mid;
            } else {
                lo = mid;
            }
            iter += 1;
        }
        // The slope sign only flips at loss values, so the optimum is the
        // smallest feasible loss inside (lo, hi].
        losses
            .iter()
            .copied()
            .filter(|&l| l > lo && l <= hi && right_slope_ok(l))
            .fold(f64::INFINITY, f64::min)
    };
    debug_assert!(lambda.is_finite());
    Ok(CvarFit {
        lambda,
        value: cvar_objective(losses, cfg.alpha, lambda),
    })
}

/// Partial derivatives of `phi(lambda; l)` w.r.t. each loss at a fixed `lambda`.
pub fn cvar_grad_at(losses: &[f64], alpha: f64, lambda: f64) -> Vec<f64> {
    let an = alpha * losses.len() as f64;
    let above = count_above(losses, lambda);
    let ties = losses.iter().filter(|&&l| l == lambda).count();
    let full = 1.0 / an;
    let tie_weight = if ties > 0 {
        ((an - above as f64) / (an * ties as f64)).clamp(0.0, full)
    } else {
        0.0
    };
    losses
        .iter()
        .map(|&l| {
            if l > lambda {
                full
            } else if l == lambda {
                tie_weight
            } else {
                0.0
            }
        })
        .collect()
}

/// CVaR value with its gradient w.r.t. every per-example loss.
pub fn cvar_loss_and_grad(losses: &[f64], cfg: &CvarConfig) -> Result<(CvarFit, Vec<f64>), LossError> {
    let fit = cvar_lambda_star(losses, cfg)?;
    Ok((fit, cvar_grad_at(losses, cfg.alpha, fit.lambda)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct AucSurrogate {
    pub value: f64,
    pub d_pos: Vec<f64>,
    pub d_neg: Vec<f64>,
    pub n_pairs: usize,
}

/// Mean over positive-negative pairs of `(eta - (s_i - s_j))^p` where the
/// margin `s_i - s_j` falls short of `eta`.
///
/// Pairs are located by sorting, so only active pairs are visited; `p = 2`
/// uses prefix sums and runs in `O((P + N) log(P + N))`.
pub fn auc_surrogate(pos: &[f64], neg: &[f64], cfg: &AucConfig) -> Result<AucSurrogate, LossError> {
    if pos.is_empty() || neg.is_empty() {
        return Err(LossError::SingleClass {
            n_pos: pos.len(),
            n_neg: neg.len(),
        });
    }
    cfg.validate()?;
    if let Some(i) = pos.iter().chain(neg).position(|s| !s.is_finite()) {
        return Err(LossError::NonFinite(i));
    }
    let eta = cfg.eta;
    let scale = 1.0 / (pos.len() as f64 * neg.len() as f64);

    let sorted_idx = |s: &[f64]| {
        let mut idx: Vec<usize> = (0..s.len()).collect();
        idx.sort_by(|&a, &b| s[a].total_cmp(&s[b]));
        idx
    };
    let neg_order = sorted_idx(neg);
    let neg_sorted: Vec<f64> = neg_order.iter().map(|&j| neg[j]).collect();
    // First sorted negative index whose pair with `si` is active.
    let first_active_neg = |si: f64| neg_sorted.partition_point(|&sj| !(si - sj < eta));

    let mut d_pos = vec![0.0; pos.len()];
    let mut d_neg = vec![0.0; neg.len()];
    let mut total = 0.0;

    if cfg.p == 2.0 {
        // Suffix sums over sorted negatives.
        let nn = neg_sorted.len();
        let mut suf1 = vec![0.0; nn + 1];
        let mut suf2 = vec![0.0; nn + 1];
        for k in (0..nn).rev() {
            suf1[k] = suf1[k + 1] + neg_sorted[k];
            suf2[k] = suf2[k + 1] + neg_sorted[k] * neg_sorted[k];
        }
        for (i, &si) in pos.iter().enumerate() {
            let k = first_active_neg(si);
            let cnt = (nn - k) as f64;
            let t = eta - si;
            total += cnt * t * t + 2.0 * t * suf1[k] + suf2[k];
            d_pos[i] = -2.0 * (cnt * t + suf1[k]) * scale;
        }
        // Prefix sums over sorted positives for the negative-side partials.
        let pos_order = sorted_idx(pos);
        let pos_sorted: Vec<f64> = pos_order.iter().map(|&i| pos[i]).collect();
        let mut pre1 = vec![0.0; pos_sorted.len() + 1];
        for (k, &s) in pos_sorted.iter().enumerate() {
            pre1[k + 1] = pre1[k] + s;
        }
        for (j, &sj) in neg.iter().enumerate() {
            let k = pos_sorted.partition_point(|&si| si - sj < eta);
            d_neg[j] = 2.0 * (k as f64 * (eta + sj) - pre1[k]) * scale;
        }
    } else {
        let p = cfg.p;
        for (i, &si) in pos.iter().enumerate() {
            let k = first_active_neg(si);
            for (&j, &sj) in neg_order[k..].iter().zip(&neg_sorted[k..]) {
                let gap = eta - (si - sj);
                total += gap.powf(p);
                let slope = p * gap.powf(p - 1.0);
                d_pos[i] -= slope;
                d_neg[j] += slope;
            }
        }
        d_pos.iter_mut().chain(d_neg.iter_mut()).for_each(|g| *g *= scale);
    }

    Ok(AucSurrogate {
        value: (total * scale).max(0.0),
        d_pos,
        d_neg,
        n_pairs: pos.len() * neg.len(),
    })
}

struct Blend<'a> {
    losses: &'a [f64],
    /// d(loss_i)/d(x_i)
    dloss: &'a [f64],
    probs: &'a [f64],
    /// d(prob_i)/d(x_i)
    dprob: &'a [f64],
    labels: &'a [Label],
}

fn blend(
    b: Blend<'_>,
    gamma: f64,
    cvar: &CvarConfig,
    auc: &AucConfig,
    fixed_lambda: Option<f64>,
) -> Result<(LossReport, Vec<f64>), LossError> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(LossError::InvalidConfig(format!("gamma {gamma} not in [0, 1]")));
    }
    check_losses(b.losses)?;
    let fit = match fixed_lambda {
        Some(lambda) => CvarFit {
            lambda,
            value: cvar_objective(b.losses, cvar.alpha, lambda),
        },
        None => cvar_lambda_star(b.losses, cvar)?,
    };
    let dcvar = cvar_grad_at(b.losses, cvar.alpha, fit.lambda);

    let mut pos = Vec::new();
    let mut neg = Vec::new();
    let mut slot = Vec::with_capacity(b.labels.len());
    for (&p, &l) in b.probs.iter().zip(b.labels) {
        if l.is_positive() {
            slot.push(pos.len());
            pos.push(p);
        } else {
            slot.push(neg.len());
            neg.push(p);
        }
    }
    let auc_term = if pos.is_empty() || neg.is_empty() {
        None
    } else {
        Some(auc_surrogate(&pos, &neg, auc)?)
    };

    let auc_value = auc_term.as_ref().map_or(0.0, |a| a.value);
    let grad = (0..b.losses.len())
        .map(|i| {
            let mut g = gamma * dcvar[i] * b.dloss[i];
            if let Some(a) = &auc_term {
                let ds = if b.labels[i].is_positive() {
                    a.d_pos[slot[i]]
                } else {
                    a.d_neg[slot[i]]
                };
                g += (1.0 - gamma) * ds * b.dprob[i];
            }
            g
        })
        .collect();
    let report = LossReport {
        cvar_value: fit.value,
        fitted_lambda: fit.lambda,
        auc_value,
        total: gamma * fit.value + (1.0 - gamma) * auc_value,
        gamma,
        n_pairs: auc_term.map_or(0, |a| a.n_pairs),
    };
    Ok((report, grad))
}

fn check_lengths(n: usize, labels: &[Label]) -> Result<(), LossError> {
    if n != labels.len() {
        return Err(LossError::LengthMismatch(n, labels.len()));
    }
    Ok(())
}

/// `gamma * CVaR(bce) + (1 - gamma) * AUC-surrogate` on probability scores,
/// with the gradient w.r.t. each score.
///
/// A single-class batch contributes no AUC term (`n_pairs = 0`).
pub fn total_loss(
    scores: &[f64],
    labels: &[Label],
    gamma: f64,
    cvar: &CvarConfig,
    auc: &AucConfig,
) -> Result<(LossReport, Vec<f64>), LossError> {
    check_lengths(scores.len(), labels)?;
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(LossError::NonFinite(i));
    }
    let losses: Vec<f64> = scores.iter().zip(labels).map(|(&s, &l)| bce_per_example(s, l)).collect();
    let dloss: Vec<f64> = scores
        .iter()
        .zip(labels)
        .map(|(&s, &l)| {
            if !(PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&s) {
                0.0
            } else if l.is_positive() {
                -1.0 / s
            } else {
                1.0 / (1.0 - s)
            }
        })
        .collect();
    let ones = vec![1.0; scores.len()];
    blend(
        Blend {
            losses: &losses,
            dloss: &dloss,
            probs: scores,
            dprob: &ones,
            labels,
        },
        gamma,
        cvar,
        auc,
        None,
    )
}

/// Same objective evaluated from logits, with the gradient w.r.t. each logit.
///
/// BCE uses the stable `softplus` form. With `fixed_lambda` the CVaR term is
/// `phi(lambda)` at that lambda instead of being re-minimized.
pub fn total_loss_logits(
    logits: &[f64],
    labels: &[Label],
    gamma: f64,
    cvar: &CvarConfig,
    auc: &AucConfig,
    fixed_lambda: Option<f64>,
) -> Result<(LossReport, Vec<f64>), LossError> {
    check_lengths(logits.len(), labels)?;
    if let Some(i) = logits.iter().position(|s| !s.is_finite()) {
        return Err(LossError::NonFinite(i));
    }
    let probs: Vec<f64> = logits.iter().map(|&z| sigmoid(z)).collect();
    let losses: Vec<f64> = logits.iter().zip(labels).map(|(&z, &l)| bce_from_logit(z, l)).collect();
    let dloss: Vec<f64> = probs.iter().zip(labels).map(|(&p, &l)| p - l.as_f64()).collect();
    let dprob: Vec<f64> = probs.iter().map(|&p| p * (1.0 - p)).collect();
    blend(
        Blend {
            losses: &losses,
            dloss: &dloss,
            probs: &probs,
            dprob: &dprob,
            labels,
        },
        gamma,
        cvar,
        auc,
        fixed_lambda,
    )
}
