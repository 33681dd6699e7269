mod common;

use common::*;
use proptest::prelude::*;
use robust_detect::bank::{decode_binary, decode_csv, encode_binary, encode_csv, FeatureBank, Label};
use robust_detect::config::TrainConfig;
use robust_detect::losses::{
    auc_surrogate, cvar_grad_at, cvar_lambda_star, cvar_objective, AucConfig, CvarConfig,
};
use robust_detect::metrics::{exact_auc, roc_curve, trapezoid_area};
use robust_detect::net::{decode_checkpoint, encode_checkpoint, MlpModel};
use robust_detect::optim::{compute_epsilon, LrSchedule, SamConfig, SamVariant, ScheduleKind};
use robust_detect::rng;

fn losses_strategy() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..8.0, 1..=64)
}

/// Scores drawn from a small pool so ties are common.
fn tied_scores() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop_oneof![(0u8..6).prop_map(|k| k as f64 / 5.0), 0.0f64..1.0], 1..40)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 256, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn cvar_matches_breakpoint_scan(losses in losses_strategy(), alpha in 0.01f64..=1.0) {
        let fit = cvar_lambda_star(&losses, &CvarConfig::new(alpha).unwrap()).unwrap();
        let oracle = cvar_breakpoints(&losses, alpha);
        prop_assert!((fit.value - oracle).abs() <= 1e-12 * oracle.abs().max(1.0));
        let lo = losses.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = losses.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(fit.lambda >= lo && fit.lambda <= hi);
        prop_assert!(fit.value >= fit.lambda);
        let mean = losses.iter().sum::<f64>() / losses.len() as f64;
        prop_assert!(fit.value <= hi + 1e-12 && fit.value >= mean - 1e-12);
    }

    #[test]
    fn cvar_is_translation_equivariant(losses in losses_strategy(), alpha in 0.05f64..=1.0, c in -3.0f64..3.0) {
        let cfg = CvarConfig::new(alpha).unwrap();
        let a = cvar_lambda_star(&losses, &cfg).unwrap().value;
        let shifted: Vec<f64> = losses.iter().map(|l| l + c).collect();
        let b = cvar_lambda_star(&shifted, &cfg).unwrap().value;
        prop_assert!((b - (a + c)).abs() < 1e-9);
    }

    #[test]
    fn cvar_gradient_weights_form_a_distribution(losses in losses_strategy(), alpha in 0.01f64..=1.0) {
        let fit = cvar_lambda_star(&losses, &CvarConfig::new(alpha).unwrap()).unwrap();
        let g = cvar_grad_at(&losses, alpha, fit.lambda);
        let cap = 1.0 / (alpha * losses.len() as f64);
        prop_assert!(g.iter().all(|&w| (0.0..=cap * (1.0 + 1e-12)).contains(&w)));
        prop_assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        // Directional derivative of the value along a random loss perturbation.
        let dir: Vec<f64> = (0..losses.len()).map(|i| ((i * 7919) % 13) as f64 / 13.0 - 0.5).collect();
        let h = 1e-7;
        let moved: Vec<f64> = losses.iter().zip(&dir).map(|(l, d)| l + h * d).collect();
        let tied = losses.iter().enumerate().any(|(i, a)| losses[..i].iter().any(|b| (a - b).abs() < 1e-5));
        if !tied {
            let fd = (cvar_breakpoints(&moved, alpha) - fit.value) / h;
            let analytic: f64 = g.iter().zip(&dir).map(|(w, d)| w * d).sum();
            prop_assert!((fd - analytic).abs() < 1e-5, "fd {} analytic {}", fd, analytic);
        }
    }

    #[test]
    fn cvar_objective_is_convex_in_lambda(losses in losses_strategy(), alpha in 0.05f64..=1.0, a in 0.0f64..8.0, b in 0.0f64..8.0) {
        let mid = cvar_objective(&losses, alpha, (a + b) / 2.0);
        let avg = (cvar_objective(&losses, alpha, a) + cvar_objective(&losses, alpha, b)) / 2.0;
        prop_assert!(mid <= avg + 1e-12);
    }

    #[test]
    fn auc_surrogate_matches_double_loop(
        pos in prop::collection::vec(0.0f64..1.0, 1..24),
        neg in prop::collection::vec(0.0f64..1.0, 1..24),
        eta in 0.05f64..1.0,
        p in prop_oneof![Just(2.0), 1.0f64..4.0],
    ) {
        let s = auc_surrogate(&pos, &neg, &AucConfig::new(eta, p).unwrap()).unwrap();
        let (v, dp, dn) = auc_pairs(&pos, &neg, eta, p);
        prop_assert!((s.value - v).abs() < 1e-9);
        for (a, b) in s.d_pos.iter().zip(&dp) { prop_assert!((a - b).abs() < 1e-9); }
        for (a, b) in s.d_neg.iter().zip(&dn) { prop_assert!((a - b).abs() < 1e-9); }
        prop_assert_eq!(s.n_pairs, pos.len() * neg.len());
    }

    #[test]
    fn auc_surrogate_vanishes_with_wide_margins(
        pos in prop::collection::vec(0.7f64..1.0, 1..16),
        neg in prop::collection::vec(0.0f64..0.1, 1..16),
    ) {
        let s = auc_surrogate(&pos, &neg, &AucConfig::new(0.6, 2.0).unwrap()).unwrap();
        prop_assert_eq!(s.value, 0.0);
        prop_assert!(s.d_pos.iter().chain(&s.d_neg).all(|&g| g == 0.0));
    }

    #[test]
    fn exact_auc_equals_pair_counting(pos in tied_scores(), neg in tied_scores()) {
        let auc = exact_auc(&pos, &neg).unwrap();
        prop_assert_eq!(auc.to_bits(), auc_pair_count(&pos, &neg).to_bits());
        let roc = roc_curve(&pos, &neg).unwrap();
        prop_assert!((trapezoid_area(&roc) - auc).abs() < 1e-12);
        prop_assert_eq!(roc.first().copied(), Some((0.0, 0.0)));
        prop_assert_eq!(roc.last().copied(), Some((1.0, 1.0)));
        prop_assert!(roc.windows(2).all(|w| w[1].0 >= w[0].0 && w[1].1 >= w[0].1));
    }

    #[test]
    fn exact_auc_is_rank_invariant_and_antisymmetric(pos in tied_scores(), neg in tied_scores()) {
        let auc = exact_auc(&pos, &neg).unwrap();
        let f = |s: &f64| (3.0 * s).exp() - 2.0;
        let tp: Vec<f64> = pos.iter().map(f).collect();
        let tn: Vec<f64> = neg.iter().map(f).collect();
        prop_assert_eq!(exact_auc(&tp, &tn).unwrap(), auc);
        prop_assert!((exact_auc(&neg, &pos).unwrap() - (1.0 - auc)).abs() < 1e-15);
        prop_assert!((0.0..=1.0).contains(&auc));
    }

    #[test]
    fn sign_epsilon_contract(flat in prop::collection::vec(prop_oneof![Just(0.0), -5.0f64..5.0], 185), c in 1e-3f64..1e3) {
        let mut g = MlpModel::zeros(&[8, 8, 8, 1], 0.0).unwrap().params().zeros_like();
        g.assign_flat(&flat);
        let cfg = SamConfig::new(0.05, SamVariant::Sign).unwrap();
        let e = compute_epsilon(&g, &cfg).unwrap();
        for (ei, gi) in e.flatten().iter().zip(&flat) {
            if *gi == 0.0 { prop_assert_eq!(*ei, 0.0); } else { prop_assert_eq!(ei.abs(), 0.05); prop_assert_eq!(ei.signum(), gi.signum()); }
        }
        let mut scaled = g.clone();
        scaled.assign_flat(&flat.iter().map(|v| v * c).collect::<Vec<_>>());
        prop_assert!(compute_epsilon(&scaled, &cfg).unwrap().bit_eq(&e));
        let l2 = compute_epsilon(&g, &SamConfig::new(0.05, SamVariant::L2Normalized).unwrap()).unwrap();
        prop_assert!(l2.l2_norm() <= 0.05 * (1.0 + 1e-12));
    }

    #[test]
    fn cosine_schedule_is_non_increasing(total in 1u64..5000, lr in 1e-5f64..1.0) {
        let s = LrSchedule::new(lr, total, ScheduleKind::Cosine).unwrap();
        let mut prev = s.lr_at(0).unwrap();
        prop_assert_eq!(prev, lr);
        for t in 1..=total.min(400) {
            let v = s.lr_at(t * total / total.min(400)).unwrap();
            prop_assert!(v <= prev);
            prev = v;
        }
        prop_assert!(s.lr_at(total).unwrap().abs() < 1e-15 * lr.max(1.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn bank_formats_round_trip(
        rows in prop::collection::vec((prop::collection::vec(-1e6f64..1e6, 3), any::<bool>()), 0..20),
        tag in "[a-z/._]{0,12}",
    ) {
        let rows: Vec<(Vec<f64>, Label)> = rows
            .into_iter()
            .map(|(v, b)| (v, if b { Label::Generated } else { Label::Real }))
            .collect();
        let bank = FeatureBank::from_rows(3, rows, tag).unwrap();
        let mut bin = Vec::new();
        encode_binary(&bank, &mut bin).unwrap();
        let back = decode_binary(&bin).unwrap();
        prop_assert_eq!(back.dim(), bank.dim());
        prop_assert_eq!(back.examples(), bank.examples());
        let mut csv = Vec::new();
        encode_csv(&bank, &mut csv).unwrap();
        let back = decode_csv(&csv).unwrap();
        prop_assert_eq!(back.examples(), bank.examples());
    }

    #[test]
    fn checkpoints_round_trip_bit_exactly(seed in any::<u64>(), hidden in 1usize..12, dim in 1usize..10) {
        let model = MlpModel::init(dim, hidden, 0.1, &mut rng::seeded(seed)).unwrap();
        let mut bytes = Vec::new();
        encode_checkpoint(&model, &mut bytes).unwrap();
        let back = decode_checkpoint(&bytes).unwrap();
        prop_assert!(back.params().bit_eq(model.params()));
        prop_assert_eq!(back.running_stats(), model.running_stats());
        prop_assert_eq!(back.param_count(), MlpModel::param_count_for(dim, hidden));
    }

    #[test]
    fn config_text_round_trips(
        alpha in 0.01f64..=1.0, gamma in 0.0f64..=1.0, eta in 0.01f64..=1.0, lr in 0.0f64..1.0,
        seed in any::<u64>(), use_cvar in any::<bool>(), use_sam in any::<bool>(),
    ) {
        let mut cfg = TrainConfig { alpha, gamma, eta, lr, seed, ..TrainConfig::default() };
        cfg.ablation.use_cvar = use_cvar;
        cfg.ablation.use_sam = use_sam;
        prop_assert_eq!(TrainConfig::from_kv(&cfg.to_kv()).unwrap(), cfg);
    }
}

#[test]
fn cvar_worst_half_of_one_to_four() {
    let fit = cvar_lambda_star(&[1.0, 2.0, 3.0, 4.0], &CvarConfig::new(0.5).unwrap()).unwrap();
    assert_eq!(fit.value, 3.5);
}
