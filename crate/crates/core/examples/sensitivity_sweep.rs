//! Sweep alpha, keep the best, then sweep gamma.
//!
//! cargo run --release --example sensitivity_sweep

use robust_detect::bank::generate_synthetic;
use robust_detect::cli::parse_values;
use robust_detect::trainer::{run_staged_sweep, split_holdout};
use robust_detect::TrainConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let bank = generate_synthetic(150, 450, 12, 3.0, 5)?;
    let (train_bank, heldout) = split_holdout(&bank, 0.25, 5);
    let base = TrainConfig {
        hidden: 32,
        max_iterations: 6,
        ..TrainConfig::default()
    };
    let grid = parse_values("0.1:0.9:0.1")?;
    let staged = run_staged_sweep(&train_bank, &heldout, &base, &grid, &grid, 1)?;
    println!("alpha  AUC");
    for r in &staged.alpha_rows {
        println!("{:<6} {:.5}", r.value, r.auc);
    }
    println!("best alpha {}\n\ngamma  AUC", staged.best_alpha);
    for r in &staged.gamma_rows {
        println!("{:<6} {:.5}", r.value, r.auc);
    }
    println!("best gamma {}", staged.best_gamma);
    Ok(())
}
