//! Metrics, confidence intervals and curves for a confusion matrix.

use flowprompt::metrics::{
    bootstrap_f1_ci, classification_metrics, roc_pr_points, wilson_ci, ConfusionMatrix, Z_95,
};

fn main() -> anyhow::Result<()> {
    let cm = ConfusionMatrix { tp: 87, fp: 28, tn: 70, fn_: 15 };
    let m = classification_metrics(&cm);
    println!(
        "accuracy {:.4}  precision {:.4}  recall {:.4}  F1 {:.4}  macro-F1 {:.4}",
        m.accuracy, m.precision_pos, m.recall_pos, m.f1_pos, m.macro_f1
    );

    let correct = cm.tp + cm.tn;
    let acc = wilson_ci(correct, cm.total(), Z_95)?;
    println!("accuracy Wilson 95%: [{:.4}, {:.4}]", acc.lo, acc.hi);

    let (labels, preds) = cm.expand();
    let f1 = bootstrap_f1_ci(&labels, &preds, 2000, 0)?;
    println!("F1 bootstrap 95%: [{:.4}, {:.4}]", f1.lo, f1.hi);

    // Coarse scores that agree with the predictions, for the curves.
    let scores: Vec<f64> = preds.iter().zip(&labels).map(|(p, l)| match (p.is_attack(), l.is_attack()) {
        (true, true) => 0.9,
        (true, false) => 0.7,
        (false, true) => 0.3,
        (false, false) => 0.1,
    }).collect();
    let curves = roc_pr_points(&scores, &labels)?;
    println!("ROC AUC {:.4} over {} thresholds", curves.auc_roc, curves.points.len());
    Ok(())
}
