//! Picks the F1-maximizing threshold on a small dev set and applies it.

use flowprompt::calibration::{apply_threshold, calibrate_threshold};
use flowprompt::dataset::Label;

fn main() -> anyhow::Result<()> {
    use Label::{Attack as A, Benign as B};
    let scores = [0.95, 0.85, 0.70, 0.65, 0.55, 0.40, 0.35, 0.30, 0.20, 0.05];
    let labels = [A, A, A, B, A, B, A, B, B, B];

    let result = calibrate_threshold(&scores, &labels)?;
    println!("tau* = {} (dev F1 {:.4}, {} candidates)", result.tau_star, result.dev_f1, result.candidate_count);
    for p in &result.sweep {
        println!("  tau {:.2}  F1 {:.4}", p.tau, p.f1);
    }

    let fresh = [0.9, 0.6, 0.5, 0.1];
    let decided = apply_threshold(&fresh, result.tau_star);
    for (s, d) in fresh.iter().zip(&decided) {
        println!("score {s:.2} -> {d}");
    }
    Ok(())
}
