//! Exact ranking metrics.
//!
//! AUC is the Mann-Whitney statistic: the fraction of positive-negative
//! pairs ranked correctly, ties counting one half. The sort-based routine
//! works in integer half-rank units so it agrees bit-for-bit with direct
//! pair counting.

use std::io::{self, Write};

use thiserror::Error;

use crate::bank::FeatureBank;
use crate::net::{MlpModel, NetError};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("need both classes ({n_pos} positive, {n_neg} negative)")]
    EmptyClass { n_pos: usize, n_neg: usize },
    #[error("non-finite score")]
    NonFinite,
    #[error(transparent)]
    Net(#[from] NetError),
}

fn check(pos: &[f64], neg: &[f64]) -> Result<(), MetricsError> {
    if pos.is_empty() || neg.is_empty() {
        return Err(MetricsError::EmptyClass {
            n_pos: pos.len(),
            n_neg: neg.len(),
        });
    }
    if pos.iter().chain(neg).any(|s| !s.is_finite()) {
        return Err(MetricsError::NonFinite);
    }
    Ok(())
}

/// Rank-based AUC in `O((P + N) log(P + N))`.
pub fn exact_auc(pos: &[f64], neg: &[f64]) -> Result<f64, MetricsError> {
    check(pos, neg)?;
    let mut all: Vec<(f64, bool)> = pos
        .iter()
        .map(|&s| (s, true))
        .chain(neg.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));

    // Sum over positives of twice their (1-based, tie-averaged) rank.
    let mut twice_rank_sum: u128 = 0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i + 1;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        let positives = all[i..j].iter().filter(|e| e.1).count() as u128;
        twice_rank_sum += positives * (i as u128 + 1 + j as u128);
        i = j;
    }
    let p = pos.len() as u128;
    let n = neg.len() as u128;
    let twice_u = twice_rank_sum - p * (p + 1);
    Ok(twice_u as f64 / (2 * p * n) as f64)
}

/// ROC points from `(0, 0)` to `(1, 1)`, one step per distinct score
/// threshold taken in descending order.
pub fn roc_curve(pos: &[f64], neg: &[f64]) -> Result<Vec<(f64, f64)>, MetricsError> {
    check(pos, neg)?;
    let mut all: Vec<(f64, bool)> = pos
        .iter()
        .map(|&s| (s, true))
        .chain(neg.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (np, nn) = (pos.len() as f64, neg.len() as f64);
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            if all[j].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            j += 1;
        }
        points.push((fp as f64 / nn, tp as f64 / np));
        i = j;
    }
    Ok(points)
}

pub fn trapezoid_area(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
        .sum()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoreStats {
    pub min: f64,
    pub mean: f64,
    pub max: f64,
}

impl ScoreStats {
    fn of(scores: &[f64]) -> Self {
        Self {
            min: scores.iter().copied().fold(f64::INFINITY, f64::min),
            mean: scores.iter().sum::<f64>() / scores.len() as f64,
            max: scores.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub auc: f64,
    pub roc_points: Vec<(f64, f64)>,
    pub n_pos: usize,
    pub n_neg: usize,
    pub pos_stats: ScoreStats,
    pub neg_stats: ScoreStats,
}

impl EvalReport {
    pub fn from_scores(pos: &[f64], neg: &[f64]) -> Result<Self, MetricsError> {
        Ok(Self {
            auc: exact_auc(pos, neg)?,
            roc_points: roc_curve(pos, neg)?,
            n_pos: pos.len(),
            n_neg: neg.len(),
            pos_stats: ScoreStats::of(pos),
            neg_stats: ScoreStats::of(neg),
        })
    }

    /// AUC as a percentage with six decimals, e.g. `99.999854`.
    pub fn auc_percent(&self) -> String {
        format_percent(self.auc)
    }

    /// `key=value` summary lines.
    pub fn to_kv(&self) -> String {
        format!(
            "auc={}\nauc_percent={}\nn_pos={}\nn_neg={}\n\
             pos_min={}\npos_mean={}\npos_max={}\nneg_min={}\nneg_mean={}\nneg_max={}\n",
            self.auc,
            self.auc_percent(),
            self.n_pos,
            self.n_neg,
            self.pos_stats.min,
            self.pos_stats.mean,
            self.pos_stats.max,
            self.neg_stats.min,
            self.neg_stats.mean,
            self.neg_stats.max,
        )
    }
}

pub fn format_percent(auc: f64) -> String {
    format!("{:.6}", auc * 100.0)
}

const SCORE_CHUNK: usize = 4096;

/// Eval-mode scores for every example, split by label.
pub fn split_scores(model: &MlpModel, bank: &FeatureBank) -> Result<(Vec<f64>, Vec<f64>), MetricsError> {
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    let idx: Vec<usize> = (0..bank.len()).collect();
    for chunk in idx.chunks(SCORE_CHUNK) {
        let scores = model.scores(bank.gather(chunk).view())?;
        for (&i, &s) in chunk.iter().zip(scores.iter()) {
            if bank.examples()[i].label.is_positive() {
                pos.push(s);
            } else {
                neg.push(s);
            }
        }
    }
    Ok((pos, neg))
}

pub fn evaluate(model: &MlpModel, bank: &FeatureBank) -> Result<EvalReport, MetricsError> {
    let counts = bank.class_counts();
    if !counts.has_both() {
        return Err(MetricsError::EmptyClass {
            n_pos: counts.n_pos,
            n_neg: counts.n_neg,
        });
    }
    let (pos, neg) = split_scores(model, bank)?;
    EvalReport::from_scores(&pos, &neg)
}

pub fn write_roc_csv<W: Write + ?Sized>(points: &[(f64, f64)], w: &mut W) -> io::Result<()> {
    writeln!(w, "fpr,tpr")?;
    for (fpr, tpr) in points {
        writeln!(w, "{fpr:?},{tpr:?}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bank::generate_synthetic;
    use crate::net::Mode;

    #[test]
    fn hand_values() {
        assert_eq!(exact_auc(&[0.9], &[0.1]).unwrap(), 1.0);
        assert_eq!(exact_auc(&[0.5], &[0.5]).unwrap(), 0.5);
        assert_eq!(exact_auc(&[0.8, 0.4], &[0.6, 0.2]).unwrap(), 0.75);
        assert_eq!(exact_auc(&[0.1, 0.2], &[0.8, 0.9]).unwrap(), 0.0);
        assert_eq!(exact_auc(&[3.0, 5.0], &[1.0, 2.0, 4.0]).unwrap(), 5.0 / 6.0);
    }

    #[test]
    fn signed_zeros_tie() {
        assert_eq!(exact_auc(&[0.0], &[-0.0]).unwrap(), 0.5);
    }

    #[test]
    fn empty_class_is_an_error() {
        assert!(matches!(exact_auc(&[], &[0.1]), Err(MetricsError::EmptyClass { .. })));
        assert!(matches!(roc_curve(&[0.1], &[]), Err(MetricsError::EmptyClass { .. })));
        assert!(matches!(exact_auc(&[f64::NAN], &[0.1]), Err(MetricsError::NonFinite)));
    }

    #[test]
    fn roc_shapes() {
        let pts = roc_curve(&[0.9, 0.8], &[0.2, 0.1]).unwrap();
        assert!(pts.contains(&(0.0, 1.0)));
        let pts = roc_curve(&[0.5, 0.5], &[0.5]).unwrap();
        assert_eq!(pts, vec![(0.0, 0.0), (1.0, 1.0)]);
        assert_eq!(trapezoid_area(&pts), 0.5);
        let pts = roc_curve(&[0.8, 0.4], &[0.6, 0.2]).unwrap();
        assert_eq!(pts.first(), Some(&(0.0, 0.0)));
        assert_eq!(pts.last(), Some(&(1.0, 1.0)));
        assert!((trapezoid_area(&pts) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn zero_model_has_chance_auc() {
        let mut m = MlpModel::zeros(&[3, 4, 4, 1], 0.0).unwrap();
        m.set_mode(Mode::Eval);
        let bank = generate_synthetic(5, 7, 3, 2.0, 1).unwrap();
        let r = evaluate(&m, &bank).unwrap();
        assert_eq!(r.auc, 0.5);
        assert_eq!((r.n_pos, r.n_neg), (5, 7));
        assert_eq!(r.pos_stats.mean, 0.5);
        let single = generate_synthetic(0, 3, 3, 2.0, 1).unwrap();
        assert!(evaluate(&m, &single).is_err());
    }

    #[test]
    fn roc_csv_has_header() {
        let mut out = Vec::new();
        write_roc_csv(&[(0.0, 0.0), (1.0, 1.0)], &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "fpr,tpr\n0.0,0.0\n1.0,1.0\n");
        assert_eq!(format_percent(0.99999854), "99.999854");
    }
}
