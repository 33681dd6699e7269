//! Compare backprop against central differences on a tiny model.
//!
//! cargo run --example gradient_check

use robust_detect::bank::generate_synthetic;
use robust_detect::losses::total_loss_logits;
use robust_detect::net::DropoutMasks;
use robust_detect::trainer::{init_model, objective_gradient};
use robust_detect::TrainConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config = TrainConfig {
        hidden: 4,
        ..TrainConfig::default()
    };
    let objective = config.objective()?;
    let bank = generate_synthetic(4, 4, 3, 1.0, 2)?;
    let x = bank.features();
    let labels = bank.labels();
    let model = init_model(bank.dim(), &config)?;
    let masks = DropoutMasks::identity(2);

    let (_, grads, _) = objective_gradient(&model, x.view(), &labels, &masks, &objective, None)?;
    let loss_at = |params: &robust_detect::params::Params| -> Result<f64, Box<dyn std::error::Error>> {
        let mut probe = model.clone();
        probe.set_params(params.clone())?;
        let trace = probe.forward_with_masks(x.view(), &masks)?;
        let logits = trace.logits.to_vec();
        let (r, _) = total_loss_logits(&logits, &labels, objective.gamma, &objective.cvar, &objective.auc, None)?;
        Ok(r.total)
    };

    let h = 1e-6;
    let mut worst: f64 = 0.0;
    let names = model.params().tensor_names();
    let sizes: Vec<usize> = model.params().tensors().iter().map(|t| t.len()).collect();
    let analytic = grads.flatten();
    let mut k = 0;
    for (name, size) in names.iter().zip(sizes) {
        let mut tensor_worst: f64 = 0.0;
        for _ in 0..size {
            let mut plus = model.params().clone();
            *plus.get_mut(k).unwrap() += h;
            let mut minus = model.params().clone();
            *minus.get_mut(k).unwrap() -= h;
            let fd = (loss_at(&plus)? - loss_at(&minus)?) / (2.0 * h);
            let rel = (analytic[k] - fd).abs() / analytic[k].abs().max(fd.abs()).max(1e-4);
            tensor_worst = tensor_worst.max(rel);
            k += 1;
        }
        println!("{name:<16} {size:>4} params  max rel err {tensor_worst:.2e}");
        worst = worst.max(tensor_worst);
    }
    println!("overall max rel err {worst:.2e}");
    Ok(())
}
