//! Operating-threshold selection on a dev slice.
//!
//! F1 is piecewise constant in the threshold and only changes at observed
//! scores, so sweeping `{0} ∪ scores` is exact.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Label;

#[derive(Debug, Error, PartialEq)]
pub enum CalibrationError {
    #[error("no positive labels, F1 is undefined for every threshold")]
    NoPositives,
    #[error("{scores} scores but {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("no scores to calibrate on")]
    Empty,
    #[error("score {0} at index {1} is outside [0, 1]")]
    ScoreOutOfRange(f64, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub tau: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub tau_star: f64,
    pub dev_f1: f64,
    pub candidate_count: usize,
    pub sweep: Vec<SweepPoint>,
}

/// Positive-class F1 from counts, 0 when there are no true positives.
pub(crate) fn f1_counts(tp: usize, fp: usize, fn_: usize) -> f64 {
    if tp == 0 {
        0.0
    } else {
        (2 * tp) as f64 / (2 * tp + fp + fn_) as f64
    }
}

/// Picks the smallest threshold that maximizes positive-class F1 of
/// `score >= tau` over the candidates `{0} ∪ scores`.
pub fn calibrate_threshold(scores: &[f64], labels: &[Label]) -> Result<CalibrationResult, CalibrationError> {
    if scores.len() != labels.len() {
        return Err(CalibrationError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    if scores.is_empty() {
        return Err(CalibrationError::Empty);
    }
    if let Some((i, &s)) = scores.iter().enumerate().find(|(_, s)| !(0.0..=1.0).contains(*s)) {
        return Err(CalibrationError::ScoreOutOfRange(s, i));
    }
    let positives = labels.iter().filter(|l| l.is_attack()).count();
    if positives == 0 {
        return Err(CalibrationError::NoPositives);
    }

    // Sorted descending; walking down admits items into the positive set.
    let mut order: Vec<(f64, bool)> = scores.iter().copied().zip(labels.iter().map(|l| l.is_attack())).collect();
    order.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut sweep_desc = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let tau = order[i].0;
        while i < order.len() && order[i].0 == tau {
            if order[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        sweep_desc.push(SweepPoint {
            tau,
            f1: f1_counts(tp, fp, positives - tp),
        });
    }
    let mut sweep: Vec<SweepPoint> = sweep_desc.into_iter().rev().collect();
    if sweep[0].tau > 0.0 {
        // Threshold 0 predicts everything positive, same as the lowest score.
        let all = sweep[0].f1;
        sweep.insert(0, SweepPoint { tau: 0.0, f1: all });
    }

    let dev_f1 = sweep.iter().map(|p| p.f1).fold(f64::NEG_INFINITY, f64::max);
    let tau_star = sweep.iter().find(|p| p.f1 == dev_f1).expect("max attained").tau;
    Ok(CalibrationResult {
        tau_star,
        dev_f1,
        candidate_count: sweep.len(),
        sweep,
    })
}

/// `score >= tau` marks an attack.
pub fn apply_threshold(scores: &[f64], tau: f64) -> Vec<Label> {
    scores
        .iter()
        .map(|&s| if s >= tau { Label::Attack } else { Label::Benign })
        .collect()
}
