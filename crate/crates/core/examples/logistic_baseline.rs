//! Trains the class-weighted logistic regression baseline on synthetic flows.

use flowprompt::baseline::{fit_transform, train_logreg, LogRegConfig};
use flowprompt::calibration::apply_threshold;
use flowprompt::dataset::Label;
use flowprompt::metrics::{classification_metrics, confusion};
use flowprompt::synth::{generate, SynthConfig};

fn main() -> anyhow::Result<()> {
    let data = generate(&SynthConfig {
        n_train: 1500,
        n_test: 500,
        ..Default::default()
    });
    let (pre, x_train) = fit_transform(&data.train)?;
    let y_train: Vec<Label> = data.train.iter().map(|r| r.label).collect();
    println!("feature dimension {}", pre.dim());

    let model = train_logreg(&x_train, &y_train, &LogRegConfig::default())?;
    let x_test = pre.transform(&data.test)?;
    let y_test: Vec<Label> = data.test.iter().map(|r| r.label).collect();
    let preds = apply_threshold(&model.predict_proba(&x_test)?, 0.5);

    let m = classification_metrics(&confusion(&y_test, &preds)?);
    println!("test accuracy {:.4}  F1 {:.4}  macro-F1 {:.4}", m.accuracy, m.f1_pos, m.macro_f1);
    Ok(())
}
