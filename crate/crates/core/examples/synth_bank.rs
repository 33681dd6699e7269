//! Write a synthetic bank in both formats, read it back, and print class counts.
//!
//! cargo run --example synth_bank -- [out_dir]

use std::path::PathBuf;

use robust_detect::bank::{generate_synthetic, load_bank, save_bank, BankFormat};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(std::env::temp_dir);
    std::fs::create_dir_all(&dir)?;

    let bank = generate_synthetic(30, 70, 8, 2.0, 42)?;
    let bin = dir.join("synth.fb");
    let csv = dir.join("synth.csv");
    save_bank(&bank, &bin, BankFormat::Binary)?;
    save_bank(&bank, &csv, BankFormat::Csv)?;

    for path in [&bin, &csv] {
        let loaded = load_bank(path, BankFormat::from_path(path))?;
        let c = loaded.class_counts();
        println!(
            "{}: {} rows, dim {}, {} generated / {} real, same rows as written: {}",
            path.display(),
            loaded.len(),
            loaded.dim(),
            c.n_pos,
            c.n_neg,
            loaded.examples() == bank.examples()
        );
    }
    let first = &bank.examples()[0];
    println!("first row label {:?}, features {:?}", first.label, &first.feature.as_slice()[..3]);
    Ok(())
}
