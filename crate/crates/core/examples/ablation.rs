//! Five-variant ablation on an imbalanced synthetic bank.
//!
//! cargo run --release --example ablation -- [hidden] [epochs]

use robust_detect::bank::generate_synthetic;
use robust_detect::trainer::run_ablation;
use robust_detect::TrainConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let hidden = args.next().map(|s| s.parse()).transpose()?.unwrap_or(64);
    let epochs = args.next().map(|s| s.parse()).transpose()?.unwrap_or(5);

    let train_bank = generate_synthetic(100, 900, 16, 2.0, 11)?;
    let heldout = generate_synthetic(50, 450, 16, 2.0, 12)?;
    let base = TrainConfig {
        hidden,
        max_iterations: epochs,
        ..TrainConfig::default()
    };
    println!("variant  cvar   auc    sam    held-out AUC");
    for row in run_ablation(&train_bank, &heldout, &base, 1)? {
        let a = row.ablation;
        println!("{:<8} {:<6} {:<6} {:<6} {:.5}", row.variant.name(), a.use_cvar, a.use_auc, a.use_sam, row.auc);
    }
    Ok(())
}
