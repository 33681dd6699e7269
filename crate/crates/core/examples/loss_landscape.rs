//! Train a small detector, then print a 2-D loss slice around it as a text heat map.
//!
//! cargo run --release --example loss_landscape -- [grid] [radius]

use robust_detect::bank::generate_synthetic;
use robust_detect::trainer::{landscape_slice, train};
use robust_detect::TrainConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let grid = args.next().map(|s| s.parse()).transpose()?.unwrap_or(11);
    let radius = args.next().map(|s| s.parse()).transpose()?.unwrap_or(1.0);

    let bank = generate_synthetic(100, 100, 8, 2.0, 8)?;
    let config = TrainConfig {
        hidden: 32,
        max_iterations: 5,
        ..TrainConfig::default()
    };
    let (model, _) = train(&bank, &config)?;
    let slice = landscape_slice(&model, &bank, &config, grid, radius, 1)?;

    let lo = slice.losses.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = slice.losses.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let shades = [' ', '.', ':', '-', '=', '+', '*', '#', '%', '@'];
    for row in slice.losses.rows() {
        let line: String = row
            .iter()
            .map(|&l| shades[(((l - lo) / (hi - lo).max(f64::MIN_POSITIVE)) * 9.0).round() as usize])
            .flat_map(|c| [c, c])
            .collect();
        println!("|{line}|");
    }
    println!("loss at theta {:.5}, range [{lo:.5}, {hi:.5}]", slice.center_loss);
    Ok(())
}
