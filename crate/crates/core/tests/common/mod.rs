//! Oracles shared by the integration and acceptance suites. Nothing here
//! calls the crate's loss or forward code; each helper is a separate,
//! deliberately naive implementation.

#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::Rng as _;
use robust_detect::bank::{FeatureBank, Label};
use robust_detect::net::{DropoutMasks, MlpModel};
use robust_detect::optim::{AdamState, LrSchedule, ScheduleKind};
use robust_detect::params::Params;
use robust_detect::rng::{self, derive_seed, Rng};
use robust_detect::trainer::streams;

pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Pre-activation values and output logits of a train-mode forward pass,
/// written as explicit loops over rows and units.
pub struct Reference {
    pub logits: Vec<f64>,
    /// `bn_out[layer][row][unit]`: batch-norm output before ReLU.
    pub bn_out: Vec<Vec<Vec<f64>>>,
}

pub fn reference_forward(params: &Params, x: &[Vec<f64>], masks: &DropoutMasks, eps: f64) -> Reference {
    let n = x.len();
    let mut a: Vec<Vec<f64>> = x.to_vec();
    let mut bn_out = Vec::new();
    for layer in 0..2 {
        let lin = &params.linears[layer];
        let norm = &params.norms[layer];
        let (out_w, in_w) = lin.weight.dim();
        let mut z = vec![vec![0.0; out_w]; n];
        for r in 0..n {
            for o in 0..out_w {
                let mut s = lin.bias[o];
                for i in 0..in_w {
                    s += lin.weight[[o, i]] * a[r][i];
                }
                z[r][o] = s;
            }
        }
        let mut y = vec![vec![0.0; out_w]; n];
        for o in 0..out_w {
            let mean = (0..n).map(|r| z[r][o]).sum::<f64>() / n as f64;
            let var = (0..n).map(|r| (z[r][o] - mean).powi(2)).sum::<f64>() / n as f64;
            for r in 0..n {
                y[r][o] = (z[r][o] - mean) / (var + eps).sqrt() * norm.scale[o] + norm.shift[o];
            }
        }
        let mut next = vec![vec![0.0; out_w]; n];
        for r in 0..n {
            for o in 0..out_w {
                let mask = masks.layers[layer].as_ref().map_or(1.0, |m| m[[r, o]]);
                next[r][o] = y[r][o].max(0.0) * mask;
            }
        }
        bn_out.push(y);
        a = next;
    }
    let head = &params.linears[2];
    let logits = (0..n)
        .map(|r| head.bias[0] + (0..a[r].len()).map(|i| head.weight[[0, i]] * a[r][i]).sum::<f64>())
        .collect();
    Reference { logits, bn_out }
}

pub fn rows_of(x: &ndarray::Array2<f64>) -> Vec<Vec<f64>> {
    x.rows().into_iter().map(|r| r.to_vec()).collect()
}

pub fn bce(z: f64, y: Label) -> f64 {
    let p = sigmoid(z);
    if y.is_positive() {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// CVaR by scanning every breakpoint: the minimum of a convex piecewise
/// linear function is attained at one of its kinks.
pub fn cvar_breakpoints(losses: &[f64], alpha: f64) -> f64 {
    let n = losses.len() as f64;
    losses
        .iter()
        .map(|&lam| lam + losses.iter().map(|&l| (l - lam).max(0.0)).sum::<f64>() / (alpha * n))
        .fold(f64::INFINITY, f64::min)
}

/// Explicit pair enumeration of the AUC surrogate and its gradients.
pub fn auc_pairs(pos: &[f64], neg: &[f64], eta: f64, p: f64) -> (f64, Vec<f64>, Vec<f64>) {
    let pairs = (pos.len() * neg.len()) as f64;
    let mut value = 0.0;
    let mut dp = vec![0.0; pos.len()];
    let mut dn = vec![0.0; neg.len()];
    for (i, &si) in pos.iter().enumerate() {
        for (j, &sj) in neg.iter().enumerate() {
            let gap = eta - (si - sj);
            if gap > 0.0 {
                value += gap.powf(p);
                let d = p * gap.powf(p - 1.0);
                dp[i] -= d;
                dn[j] += d;
            }
        }
    }
    (
        value / pairs,
        dp.iter().map(|v| v / pairs).collect(),
        dn.iter().map(|v| v / pairs).collect(),
    )
}

/// Blended objective from logits, built only from the helpers above.
pub fn total_from_logits(logits: &[f64], labels: &[Label], gamma: f64, alpha: f64, eta: f64, p: f64) -> f64 {
    let losses: Vec<f64> = logits.iter().zip(labels).map(|(&z, &y)| bce(z, y)).collect();
    let probs: Vec<f64> = logits.iter().map(|&z| sigmoid(z)).collect();
    let pos: Vec<f64> = probs.iter().zip(labels).filter(|(_, y)| y.is_positive()).map(|(&s, _)| s).collect();
    let neg: Vec<f64> = probs.iter().zip(labels).filter(|(_, y)| !y.is_positive()).map(|(&s, _)| s).collect();
    let auc = if pos.is_empty() || neg.is_empty() { 0.0 } else { auc_pairs(&pos, &neg, eta, p).0 };
    gamma * cvar_breakpoints(&losses, alpha) + (1.0 - gamma) * auc
}

/// Mann-Whitney AUC by counting every pair, in half-units.
pub fn auc_pair_count(pos: &[f64], neg: &[f64]) -> f64 {
    let mut twice: u128 = 0;
    for &a in pos {
        for &b in neg {
            if a > b {
                twice += 2;
            } else if a == b {
                twice += 1;
            }
        }
    }
    twice as f64 / (2 * pos.len() as u128 * neg.len() as u128) as f64
}

/// Smallest distance from any kink of the toy objective: ReLU inputs,
/// pairwise hinge margins, and gaps between per-example losses.
pub fn kink_distance(reference: &Reference, labels: &[Label], eta: f64) -> f64 {
    let mut d = f64::INFINITY;
    for layer in &reference.bn_out {
        for row in layer {
            for &v in row {
                d = d.min(v.abs());
            }
        }
    }
    let probs: Vec<f64> = reference.logits.iter().map(|&z| sigmoid(z)).collect();
    for (i, &si) in probs.iter().enumerate() {
        for (j, &sj) in probs.iter().enumerate() {
            if labels[i].is_positive() && !labels[j].is_positive() {
                d = d.min((eta - (si - sj)).abs());
            }
        }
    }
    let losses: Vec<f64> = reference.logits.iter().zip(labels).map(|(&z, &y)| bce(z, y)).collect();
    for i in 0..losses.len() {
        for j in 0..i {
            d = d.min((losses[i] - losses[j]).abs());
        }
    }
    d
}

/// Random toy model with non-trivial batch-norm scale and shift.
pub fn toy_model(seed: u64, input: usize, hidden: usize, dropout: f64) -> MlpModel {
    let mut r = rng::seeded(seed);
    let mut m = MlpModel::init(input, hidden, dropout, &mut r).unwrap();
    for norm in m.params_mut().norms.iter_mut() {
        norm.scale.mapv_inplace(|_| r.random_range(0.5..1.5));
        norm.shift.mapv_inplace(|_| r.random_range(-0.5..0.5));
    }
    m
}

pub fn random_batch(r: &mut Rng, rows: usize, cols: usize) -> ndarray::Array2<f64> {
    ndarray::Array2::from_shape_fn((rows, cols), |_| r.random_range(-2.0..2.0))
}

/// Mean-BCE + Adam with the trainer's seed streams and batching, written
/// without the CVaR/AUC machinery. Returns the model after `steps` steps.
pub fn plain_bce_baseline(
    bank: &FeatureBank,
    hidden: usize,
    dropout: f64,
    batch_size: usize,
    lr: f64,
    epochs: usize,
    seed: u64,
    steps: usize,
) -> MlpModel {
    let mut init_rng = rng::seeded(derive_seed(seed, streams::INIT));
    let mut model = MlpModel::init(bank.dim(), hidden, dropout, &mut init_rng).unwrap();
    let mut shuffle_rng = rng::seeded(derive_seed(seed, streams::SHUFFLE));
    let mut dropout_rng = rng::seeded(derive_seed(seed, streams::DROPOUT));
    let per_epoch = bank.len().div_ceil(batch_size);
    let schedule = LrSchedule::new(lr, (per_epoch * epochs) as u64, ScheduleKind::Cosine).unwrap();
    let mut adam = AdamState::new(model.params());
    let labels = bank.labels();
    let mut order: Vec<usize> = (0..bank.len()).collect();
    let mut step = 0usize;
    'outer: for _ in 0..epochs {
        order.shuffle(&mut shuffle_rng);
        for rows in order.chunks(batch_size) {
            if step == steps {
                break 'outer;
            }
            let x = bank.gather(rows);
            let masks = model.sample_masks(rows.len(), &mut dropout_rng);
            let trace = model.forward_with_masks(x.view(), &masks).unwrap();
            let n = rows.len() as f64;
            let dlogits: Vec<f64> = trace
                .logits
                .iter()
                .zip(rows)
                .map(|(&z, &i)| (1.0 / n) * (robust_detect::net::sigmoid(z) - labels[i].as_f64()))
                .collect();
            let grads = model.backward_logits(&trace, ndarray::ArrayView1::from(&dlogits)).unwrap();
            model.update_running_stats(&trace).unwrap();
            let lr_now = schedule.lr_at(step as u64).unwrap();
            adam.step(model.params_mut(), &grads, lr_now).unwrap();
            step += 1;
        }
    }
    model.set_mode(robust_detect::net::Mode::Eval);
    model
}

pub struct GradCheck {
    pub max_rel_err: f64,
    pub params_checked: usize,
}

pub const FD_STEP: f64 = 1e-6;
/// Gradients smaller than this are compared on an absolute scale.
pub const REL_FLOOR: f64 = 1e-4;

/// Central-difference check of every parameter of a random toy model
/// (input 8, hidden 8, batch 8, dropout masks held fixed). Returns `None`
/// when the draw lands within `1e-4` of a kink.
pub fn gradcheck_toy(seed: u64, gamma: f64, alpha: f64, eta: f64, p: f64) -> Option<GradCheck> {
    use robust_detect::config::Objective;
    use robust_detect::losses::{AucConfig, CvarConfig};
    use robust_detect::trainer::objective_gradient;

    let model = toy_model(seed, 8, 8, 0.25);
    let mut r = rng::seeded(seed ^ 0xA5A5);
    let x = random_batch(&mut r, 8, 8);
    let labels: Vec<Label> = (0..8)
        .map(|i| if i % 2 == 0 || r.random_bool(0.3) { Label::Generated } else { Label::Real })
        .collect();
    let masks = model.sample_masks(8, &mut r);
    let rows = rows_of(&x);
    let eps = model.epsilon();

    let base = reference_forward(model.params(), &rows, &masks, eps);
    if kink_distance(&base, &labels, eta) < 1e-4 {
        return None;
    }
    let objective = Objective {
        gamma,
        cvar: CvarConfig::new(alpha).unwrap(),
        auc: AucConfig::new(eta, p).unwrap(),
        sam: None,
    };
    let (_, grads, _) = objective_gradient(&model, x.view(), &labels, &masks, &objective, None).unwrap();
    let analytic = grads.flatten();

    let loss_at = |params: &Params| {
        let f = reference_forward(params, &rows, &masks, eps);
        total_from_logits(&f.logits, &labels, gamma, alpha, eta, p)
    };
    let mut max_rel: f64 = 0.0;
    for (k, &a) in analytic.iter().enumerate() {
        let mut plus = model.params().clone();
        *plus.get_mut(k).unwrap() += FD_STEP;
        let mut minus = model.params().clone();
        *minus.get_mut(k).unwrap() -= FD_STEP;
        let fd = (loss_at(&plus) - loss_at(&minus)) / (2.0 * FD_STEP);
        let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(REL_FLOOR);
        max_rel = max_rel.max(rel);
    }
    Some(GradCheck {
        max_rel_err: max_rel,
        params_checked: analytic.len(),
    })
}
