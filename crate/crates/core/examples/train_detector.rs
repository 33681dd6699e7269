//! Train on a synthetic separable bank and score a held-out bank drawn
//! from a different seed.
//!
//! cargo run --release --example train_detector -- [hidden] [epochs]

use robust_detect::bank::generate_synthetic;
use robust_detect::metrics::evaluate;
use robust_detect::trainer::train_with_progress;
use robust_detect::TrainConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let hidden = args.next().map(|s| s.parse()).transpose()?.unwrap_or(256);
    let epochs = args.next().map(|s| s.parse()).transpose()?.unwrap_or(10);

    let train_bank = generate_synthetic(500, 500, 16, 6.0, 1)?;
    let heldout = generate_synthetic(250, 250, 16, 6.0, 2)?;
    let config = TrainConfig {
        hidden,
        max_iterations: epochs,
        ..TrainConfig::default()
    };

    let (model, record) = train_with_progress(&train_bank, &config, |e| {
        println!(
            "epoch {:>2}  loss {:.5}  cvar {:.5}  auc-term {:.5}  lambda {:.5}  lr {:.2e}  {:.2}s",
            e.epoch, e.mean_total, e.mean_cvar, e.mean_auc, e.mean_lambda, e.lr, e.wall_seconds
        );
    })?;
    let report = evaluate(&model, &heldout)?;
    println!("held-out AUC {} ({}%)", report.auc, report.auc_percent());
    println!("total wall time {:.2}s", record.epochs.iter().map(|e| e.wall_seconds).sum::<f64>());
    Ok(())
}
