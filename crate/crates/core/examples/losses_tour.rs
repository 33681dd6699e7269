//! Tail-risk and ranking losses on a hand-made batch.
//!
//! cargo run --example losses_tour

use robust_detect::bank::Label;
use robust_detect::losses::{auc_surrogate, cvar_loss_and_grad, total_loss_logits, AucConfig, CvarConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let losses = [0.05, 0.2, 0.4, 1.1, 2.3, 0.9, 0.15, 3.0];
    for alpha in [1.0, 0.8, 0.5, 0.25, 0.125] {
        let (fit, weights) = cvar_loss_and_grad(&losses, &CvarConfig::new(alpha)?)?;
        let w: Vec<String> = weights.iter().map(|w| format!("{w:.3}")).collect();
        println!("alpha {alpha:<5} lambda {:.3}  cvar {:.4}  weights [{}]", fit.lambda, fit.value, w.join(" "));
    }

    let auc = AucConfig::new(0.6, 2.0)?;
    let pos = [0.9, 0.7, 0.55];
    let neg = [0.1, 0.3, 0.6];
    let s = auc_surrogate(&pos, &neg, &auc)?;
    println!("\nauc surrogate over {} pairs: {:.5}", s.n_pairs, s.value);
    println!("d/d pos {:?}", s.d_pos);
    println!("d/d neg {:?}", s.d_neg);
    let wide = auc_surrogate(&[0.95, 0.9], &[0.05, 0.2], &auc)?;
    println!("all margins >= eta: {}", wide.value);

    let logits = [2.0, 0.5, -0.3, -1.5, 0.8, -2.2];
    let labels = [Label::Generated, Label::Generated, Label::Generated, Label::Real, Label::Real, Label::Real];
    for gamma in [1.0, 0.5, 0.0] {
        let (r, _) = total_loss_logits(&logits, &labels, gamma, &CvarConfig::new(0.8)?, &auc, None)?;
        println!("gamma {gamma}: total {:.5} = {gamma}*{:.5} + {}*{:.5}", r.total, r.cvar_value, 1.0 - gamma, r.auc_value);
    }
    Ok(())
}
