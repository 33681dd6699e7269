//! One sharpness-aware step taken by hand, next to the plain step.
//!
//! cargo run --example sam_step

use robust_detect::bank::generate_synthetic;
use robust_detect::optim::{compute_epsilon, AdamState, SamConfig, SamVariant};
use robust_detect::rng;
use robust_detect::trainer::{init_model, objective_gradient, perturbed_gradient};
use robust_detect::TrainConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config = TrainConfig {
        hidden: 32,
        ..TrainConfig::default()
    };
    let objective = config.objective()?;
    let bank = generate_synthetic(16, 16, 8, 2.0, 3)?;
    let x = bank.features();
    let labels = bank.labels();
    let mut model = init_model(bank.dim(), &config)?;
    let masks = model.sample_masks(bank.len(), &mut rng::seeded(1));

    let (report, clean, _) = objective_gradient(&model, x.view(), &labels, &masks, &objective, None)?;
    println!("loss {:.5}  lambda {:.5}  |grad| {:.5}", report.total, report.fitted_lambda, clean.l2_norm());

    for variant in [SamVariant::Sign, SamVariant::L2Normalized] {
        let eps = compute_epsilon(&clean, &SamConfig::new(config.delta, variant)?)?;
        let sharp = perturbed_gradient(&mut model, x.view(), &labels, &masks, &objective, report.fitted_lambda, &eps)?;
        let mut diff = sharp.clone();
        diff.add_scaled(-1.0, &clean);
        println!(
            "{variant:?}: |eps| {:.4}  max|eps| {:.4}  |perturbed grad| {:.5}  |change| {:.5}",
            eps.l2_norm(),
            eps.max_abs(),
            sharp.l2_norm(),
            diff.l2_norm()
        );
        let (mut a, mut b) = (model.params().clone(), model.params().clone());
        AdamState::new(&a).step(&mut a, &clean, config.lr)?;
        AdamState::new(&b).step(&mut b, &sharp, config.lr)?;
        b.add_scaled(-1.0, &a);
        println!("  first Adam step differs from the plain one by {:.3e}", b.l2_norm());
    }
    Ok(())
}
