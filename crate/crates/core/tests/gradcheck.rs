mod common;

use common::*;
use robust_detect::bank::Label;
use robust_detect::losses::{total_loss_logits, AucConfig, CvarConfig};
use robust_detect::net::{DropoutMasks, Mode};
use robust_detect::rng;

#[test]
fn forward_matches_reference_implementation() {
    for seed in 0..5 {
        let mut model = toy_model(seed, 8, 8, 0.3);
        let mut r = rng::seeded(100 + seed);
        let x = random_batch(&mut r, 4, 8);
        let masks = model.sample_masks(4, &mut r);
        let trace = model.forward_with_masks(x.view(), &masks).unwrap();
        let reference = reference_forward(model.params(), &rows_of(&x), &masks, model.epsilon());
        for (a, b) in trace.logits.iter().zip(&reference.logits) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        for (a, b) in trace.probs.iter().zip(&reference.logits) {
            assert!((a - sigmoid(*b)).abs() < 1e-12);
        }
        model.set_mode(Mode::Eval);
        let eval = model.forward_with_masks(x.view(), &DropoutMasks::identity(2)).unwrap();
        assert_eq!(eval.logits, model.logits_eval(x.view()).unwrap());
    }
}

#[test]
fn total_loss_gradient_matches_finite_differences() {
    let mut checked = 0;
    let mut seed = 0;
    while checked < 12 {
        if let Some(c) = gradcheck_toy(seed, 0.5, 0.8, 0.6, 2.0) {
            assert!(c.max_rel_err < 1e-5, "seed {seed}: {}", c.max_rel_err);
            checked += 1;
        }
        seed += 1;
        assert!(seed < 200, "too many draws near kinks");
    }
}

#[test]
fn gradient_is_correct_for_other_blends_and_exponents() {
    for (gamma, alpha, p) in [(1.0, 0.8, 2.0), (0.0, 1.0, 2.0), (0.3, 0.35, 3.0), (0.7, 1.0, 1.5)] {
        let mut done = 0;
        for seed in 500..600 {
            if let Some(c) = gradcheck_toy(seed, gamma, alpha, 0.6, p) {
                assert!(c.max_rel_err < 1e-5, "gamma {gamma} alpha {alpha} p {p}: {}", c.max_rel_err);
                done += 1;
                if done == 3 {
                    break;
                }
            }
        }
        assert_eq!(done, 3);
    }
}

#[test]
fn bce_logit_derivative_matches_finite_differences() {
    let cvar = CvarConfig::new(1.0).unwrap();
    let auc = AucConfig::default();
    for &z in &[-6.0, -1.3, 0.0, 0.4, 5.5] {
        for label in [Label::Real, Label::Generated] {
            let (_, g) = total_loss_logits(&[z], &[label], 1.0, &cvar, &auc, None).unwrap();
            let h = 1e-6;
            let fd = (bce(z + h, label) - bce(z - h, label)) / (2.0 * h);
            assert!((g[0] - fd).abs() < 1e-8, "z {z}: {} vs {fd}", g[0]);
        }
    }
}
