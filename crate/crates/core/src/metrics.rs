//! Evaluation metrics: confusion counts, per-class and macro scores, Wilson
//! and bootstrap intervals, ROC/PR curve points.
//!
//! Attack (label 1) is the positive class. Any ratio with a zero denominator
//! is reported as 0.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Label;
use crate::render::format_fixed;
use crate::seeding::rank_key;

const SALT_BOOTSTRAP: u64 = 0x626f_6f74_7374_7270; // "bootstrp"

pub const DEFAULT_BOOTSTRAP_RESAMPLES: usize = 2000;
pub const Z_95: f64 = 1.96;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("{labels} labels but {preds} predictions")]
    LengthMismatch { labels: usize, preds: usize },
    #[error("no items to evaluate")]
    Empty,
    #[error("invalid counts: {successes} successes out of {n}")]
    BadCounts { successes: u64, n: u64 },
    #[error("bootstrap needs at least 100 resamples, got {0}")]
    TooFewResamples(usize),
    #[error("curves need both classes present")]
    SingleClass,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// Swaps the roles of the two classes.
    pub fn swapped(&self) -> Self {
        ConfusionMatrix {
            tp: self.tn,
            fp: self.fn_,
            tn: self.tp,
            fn_: self.fp,
        }
    }

    /// Label and prediction vectors (sorted TP, FP, TN, FN) that reproduce
    /// these counts.
    pub fn expand(&self) -> (Vec<Label>, Vec<Label>) {
        use Label::{Attack as A, Benign as B};
        let mut labels = Vec::with_capacity(self.total() as usize);
        let mut preds = Vec::with_capacity(self.total() as usize);
        for (count, l, p) in [(self.tp, A, A), (self.fp, B, A), (self.tn, B, B), (self.fn_, A, B)] {
            labels.extend(std::iter::repeat(l).take(count as usize));
            preds.extend(std::iter::repeat(p).take(count as usize));
        }
        (labels, preds)
    }
}

fn check_pair(labels: &[Label], preds: &[Label]) -> Result<(), MetricsError> {
    if labels.len() != preds.len() {
        return Err(MetricsError::LengthMismatch {
            labels: labels.len(),
            preds: preds.len(),
        });
    }
    if labels.is_empty() {
        return Err(MetricsError::Empty);
    }
    Ok(())
}

pub fn confusion(labels: &[Label], preds: &[Label]) -> Result<ConfusionMatrix, MetricsError> {
    check_pair(labels, preds)?;
    Ok(count_confusion(labels.iter().zip(preds)))
}

fn count_confusion<'a>(pairs: impl Iterator<Item = (&'a Label, &'a Label)>) -> ConfusionMatrix {
    let mut cm = ConfusionMatrix::default();
    for (l, p) in pairs {
        match (l.is_attack(), p.is_attack()) {
            (true, true) => cm.tp += 1,
            (false, true) => cm.fp += 1,
            (false, false) => cm.tn += 1,
            (true, false) => cm.fn_ += 1,
        }
    }
    cm
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision_pos: f64,
    pub recall_pos: f64,
    pub f1_pos: f64,
    pub precision_neg: f64,
    pub recall_neg: f64,
    pub f1_neg: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// All scores for one confusion matrix. An empty matrix yields all zeros.
pub fn classification_metrics(cm: &ConfusionMatrix) -> Metrics {
    let precision_pos = ratio(cm.tp, cm.tp + cm.fp);
    let recall_pos = ratio(cm.tp, cm.tp + cm.fn_);
    let precision_neg = ratio(cm.tn, cm.tn + cm.fn_);
    let recall_neg = ratio(cm.tn, cm.tn + cm.fp);
    let f1_pos = harmonic(precision_pos, recall_pos);
    let f1_neg = harmonic(precision_neg, recall_neg);
    Metrics {
        accuracy: ratio(cm.tp + cm.tn, cm.total()),
        precision_pos,
        recall_pos,
        f1_pos,
        precision_neg,
        recall_neg,
        f1_neg,
        macro_precision: (precision_pos + precision_neg) / 2.0,
        macro_recall: (recall_pos + recall_neg) / 2.0,
        macro_f1: (f1_pos + f1_neg) / 2.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IntervalMethod {
    Wilson,
    Bootstrap,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalEstimate {
    pub point: f64,
    pub lo: f64,
    pub hi: f64,
    pub method: IntervalMethod,
}

/// Wilson score interval for `successes / n`.
pub fn wilson_ci(successes: u64, n: u64, z: f64) -> Result<IntervalEstimate, MetricsError> {
    if n == 0 || successes > n {
        return Err(MetricsError::BadCounts { successes, n });
    }
    let nf = n as f64;
    let p = successes as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let center = (p + z2 / (2.0 * nf)) / denom;
    let half = z / denom * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt();
    Ok(IntervalEstimate {
        point: p,
        lo: (center - half).clamp(0.0, p),
        hi: (center + half).clamp(p, 1.0),
        method: IntervalMethod::Wilson,
    })
}

/// Percentile bootstrap (2.5 / 97.5) for positive-class F1 over paired
/// resamples. Resample `i` draws from its own RNG seeded by `(seed, i)`, so
/// results do not depend on evaluation order.
pub fn bootstrap_f1_ci(
    labels: &[Label],
    preds: &[Label],
    resamples: usize,
    seed: u64,
) -> Result<IntervalEstimate, MetricsError> {
    check_pair(labels, preds)?;
    if resamples < 100 {
        return Err(MetricsError::TooFewResamples(resamples));
    }
    let n = labels.len();
    let point = classification_metrics(&count_confusion(labels.iter().zip(preds))).f1_pos;
    let mut f1s: Vec<f64> = (0..resamples as u64)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(rank_key(seed, SALT_BOOTSTRAP, i));
            let cm = count_confusion((0..n).map(|_| {
                let j = rng.gen_range(0..n);
                (&labels[j], &preds[j])
            }));
            classification_metrics(&cm).f1_pos
        })
        .collect();
    f1s.sort_by(f64::total_cmp);
    let lo = percentile_sorted(&f1s, 0.025);
    let hi = percentile_sorted(&f1s, 0.975);
    Ok(IntervalEstimate {
        point,
        lo: lo.min(point),
        hi: hi.max(point),
        method: IntervalMethod::Bootstrap,
    })
}

fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curves {
    /// One point per unique score, thresholds descending.
    pub points: Vec<CurvePoint>,
    pub auc_roc: f64,
}

impl Curves {
    /// `(fpr, tpr)` from `(0, 0)` to `(1, 1)`, fpr ascending.
    pub fn roc(&self) -> Vec<(f64, f64)> {
        let mut v = vec![(0.0, 0.0)];
        v.extend(self.points.iter().map(|p| (p.fpr, p.tpr)));
        v
    }

    /// `(recall, precision)`, recall ascending.
    pub fn pr(&self) -> Vec<(f64, f64)> {
        self.points.iter().map(|p| (p.recall, p.precision)).collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["threshold", "fpr", "tpr", "precision", "recall"])?;
        for p in &self.points {
            out.write_record([
                p.threshold.to_string(),
                p.fpr.to_string(),
                p.tpr.to_string(),
                p.precision.to_string(),
                p.recall.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// ROC and PR points at every unique-score threshold (`score >= t`), with
/// trapezoidal ROC AUC.
pub fn roc_pr_points(scores: &[f64], labels: &[Label]) -> Result<Curves, MetricsError> {
    if scores.len() != labels.len() {
        return Err(MetricsError::LengthMismatch {
            labels: labels.len(),
            preds: scores.len(),
        });
    }
    let pos = labels.iter().filter(|l| l.is_attack()).count() as u64;
    let neg = labels.len() as u64 - pos;
    if pos == 0 || neg == 0 {
        return Err(MetricsError::SingleClass);
    }
    let mut order: Vec<(f64, bool)> = scores.iter().copied().zip(labels.iter().map(|l| l.is_attack())).collect();
    order.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut points = Vec::new();
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut auc = 0.0;
    let (mut prev_fpr, mut prev_tpr) = (0.0, 0.0);
    let mut i = 0;
    while i < order.len() {
        let t = order[i].0;
        while i < order.len() && order[i].0 == t {
            if order[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let fpr = ratio(fp, neg);
        let tpr = ratio(tp, pos);
        auc += (fpr - prev_fpr) * (tpr + prev_tpr) / 2.0;
        (prev_fpr, prev_tpr) = (fpr, tpr);
        points.push(CurvePoint {
            threshold: t,
            fpr,
            tpr,
            precision: ratio(tp, tp + fp),
            recall: tpr,
        });
    }
    Ok(Curves { points, auc_roc: auc })
}

/// Half-to-even rounding to four decimals, as written to `metrics.json`.
pub fn round4(v: f64) -> f64 {
    format_fixed(v, 4).parse().expect("formatted float parses")
}

/// Everything written to `metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n: u64,
    pub tau: Option<f64>,
    #[serde(flatten)]
    pub metrics: Metrics,
    pub accuracy_ci: IntervalEstimate,
    pub precision_ci: Option<IntervalEstimate>,
    pub recall_ci: Option<IntervalEstimate>,
    pub f1_ci: IntervalEstimate,
    pub auc_roc: Option<f64>,
    pub bootstrap_resamples: usize,
    pub bootstrap_seed: u64,
}

impl MetricsReport {
    /// Computes every reported quantity. `scores` enables the AUC.
    pub fn compute(
        labels: &[Label],
        preds: &[Label],
        scores: Option<&[f64]>,
        tau: Option<f64>,
        resamples: usize,
        seed: u64,
    ) -> Result<Self, MetricsError> {
        let cm = confusion(labels, preds)?;
        let metrics = classification_metrics(&cm);
        let auc_roc = match scores {
            Some(s) => match roc_pr_points(s, labels) {
                Ok(c) => Some(c.auc_roc),
                Err(MetricsError::SingleClass) => None,
                Err(e) => return Err(e),
            },
            None => None,
        };
        Ok(MetricsReport {
            n: cm.total(),
            tau,
            metrics,
            accuracy_ci: wilson_ci(cm.tp + cm.tn, cm.total(), Z_95)?,
            precision_ci: wilson_ci(cm.tp, cm.tp + cm.fp, Z_95).ok(),
            recall_ci: wilson_ci(cm.tp, cm.tp + cm.fn_, Z_95).ok(),
            f1_ci: bootstrap_f1_ci(labels, preds, resamples, seed)?,
            auc_roc,
            bootstrap_resamples: resamples,
            bootstrap_seed: seed,
        })
    }

    /// Copy with every real rounded half-to-even to four decimals.
    pub fn rounded(&self) -> Self {
        let m = &self.metrics;
        let ci = |c: &IntervalEstimate| IntervalEstimate {
            point: round4(c.point),
            lo: round4(c.lo),
            hi: round4(c.hi),
            method: c.method,
        };
        MetricsReport {
            n: self.n,
            tau: self.tau,
            metrics: Metrics {
                accuracy: round4(m.accuracy),
                precision_pos: round4(m.precision_pos),
                recall_pos: round4(m.recall_pos),
                f1_pos: round4(m.f1_pos),
                precision_neg: round4(m.precision_neg),
                recall_neg: round4(m.recall_neg),
                f1_neg: round4(m.f1_neg),
                macro_precision: round4(m.macro_precision),
                macro_recall: round4(m.macro_recall),
                macro_f1: round4(m.macro_f1),
            },
            accuracy_ci: ci(&self.accuracy_ci),
            precision_ci: self.precision_ci.as_ref().map(ci),
            recall_ci: self.recall_ci.as_ref().map(ci),
            f1_ci: ci(&self.f1_ci),
            auc_roc: self.auc_roc.map(round4),
            bootstrap_resamples: self.bootstrap_resamples,
            bootstrap_seed: self.bootstrap_seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use Label::{Attack as A, Benign as B};

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn confusion_examples() {
        let labels: Vec<Label> = (0..20).map(|i| if i < 10 { A } else { B }).collect();
        let cm = confusion(&labels, &labels).unwrap();
        assert_eq!(cm, ConfusionMatrix { tp: 10, fp: 0, tn: 10, fn_: 0 });

        let cm = confusion(&[A, A, B, B], &[A, A, A, A]).unwrap();
        assert_eq!(cm, ConfusionMatrix { tp: 2, fp: 2, tn: 0, fn_: 0 });

        assert_eq!(confusion(&[], &[]), Err(MetricsError::Empty));
        assert!(matches!(confusion(&[A], &[]), Err(MetricsError::LengthMismatch { .. })));
    }

    #[test]
    fn expanded_counts_roundtrip() {
        let cm = ConfusionMatrix { tp: 87, fp: 28, tn: 70, fn_: 15 };
        let (l, p) = cm.expand();
        assert_eq!(confusion(&l, &p).unwrap(), cm);
    }

    #[test]
    fn zero_denominators() {
        let m = classification_metrics(&ConfusionMatrix { tp: 0, fp: 0, tn: 5, fn_: 0 });
        assert_eq!(m.accuracy, 1.0);
        assert_eq!(m.precision_pos, 0.0);
        assert_eq!(m.recall_pos, 0.0);
        assert_eq!(m.f1_pos, 0.0);
    }

    #[test]
    fn table_rows() {
        let m = classification_metrics(&ConfusionMatrix { tp: 87, fp: 28, tn: 70, fn_: 15 });
        assert!(close(m.accuracy, 0.7850, 1e-4));
        assert!(close(m.precision_pos, 0.7565, 1e-4));
        assert!(close(m.recall_pos, 0.8529, 1e-4));
        assert!(close(m.f1_pos, 0.8018, 1e-4));
        assert!(close(m.macro_f1, 0.7834, 1e-4));
        let m = classification_metrics(&ConfusionMatrix { tp: 849, fp: 750, tn: 101, fn_: 0 });
        assert!(close(m.accuracy, 0.5588, 1e-4));
        assert!(close(m.precision_pos, 0.5310, 1e-4));
        assert_eq!(m.recall_pos, 1.0);
        assert!(close(m.f1_pos, 0.6936, 1e-4));
    }

    #[test]
    fn wilson_cases() {
        let ci = wilson_ci(157, 200, Z_95).unwrap();
        assert_eq!(ci.point, 0.785);
        assert!(close(ci.lo, 0.7230, 5e-4));
        assert!(close(ci.hi, 0.8363, 5e-4));
        assert_eq!(wilson_ci(0, 10, Z_95).unwrap().lo, 0.0);
        let full = wilson_ci(10, 10, Z_95).unwrap();
        assert!(full.hi <= 1.0 && full.lo > 0.0);
        assert!(wilson_ci(11, 10, Z_95).is_err());
        assert!(wilson_ci(0, 0, Z_95).is_err());
    }

    #[test]
    fn bootstrap_cases() {
        let labels: Vec<Label> = (0..50).map(|i| if i % 2 == 0 { A } else { B }).collect();
        let ci = bootstrap_f1_ci(&labels, &labels, 500, 1).unwrap();
        assert_eq!((ci.lo, ci.hi), (1.0, 1.0));
        let (l, p) = ConfusionMatrix { tp: 87, fp: 28, tn: 70, fn_: 15 }.expand();
        let a = bootstrap_f1_ci(&l, &p, 2000, 11).unwrap();
        let b = bootstrap_f1_ci(&l, &p, 2000, 11).unwrap();
        assert_eq!(a, b);
        assert!(a.lo < 0.8018 && 0.8018 < a.hi);
        assert!(matches!(bootstrap_f1_ci(&l, &p, 99, 0), Err(MetricsError::TooFewResamples(99))));
    }

    #[test]
    fn curve_cases() {
        let c = roc_pr_points(&[0.9, 0.8, 0.2, 0.1], &[A, A, B, B]).unwrap();
        assert_eq!(c.auc_roc, 1.0);
        let c = roc_pr_points(&[0.5; 4], &[A, B, A, B]).unwrap();
        assert_eq!(c.auc_roc, 0.5);
        assert_eq!(c.roc(), vec![(0.0, 0.0), (1.0, 1.0)]);
        let c = roc_pr_points(&[0.9, 0.7, 0.3, 0.1], &[A, B, A, B]).unwrap();
        assert_eq!(c.auc_roc, 0.75);
        assert_eq!(roc_pr_points(&[0.1], &[A]), Err(MetricsError::SingleClass));
    }

    #[test]
    fn round4_half_even() {
        assert_eq!(round4(0.78495), 0.785);
        assert_eq!(round4(0.80176), 0.8018);
    }

    /// AUC as the fraction of concordant (positive, negative) pairs, ties ½.
    fn pair_auc(scores: &[f64], labels: &[Label]) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for (si, li) in scores.iter().zip(labels) {
            for (sj, lj) in scores.iter().zip(labels) {
                if li.is_attack() && !lj.is_attack() {
                    den += 1.0;
                    if si > sj {
                        num += 1.0;
                    } else if si == sj {
                        num += 0.5;
                    }
                }
            }
        }
        num / den
    }

    proptest! {
        #[test]
        fn auc_matches_pair_count(
            raw in proptest::collection::vec(((0u8..=20), any::<bool>()), 2..=50)
        ) {
            let scores: Vec<f64> = raw.iter().map(|(s, _)| f64::from(*s) / 20.0).collect();
            let labels: Vec<Label> = raw.iter().map(|(_, b)| if *b { A } else { B }).collect();
            prop_assume!(labels.contains(&A) && labels.contains(&B));
            let c = roc_pr_points(&scores, &labels).unwrap();
            prop_assert!((c.auc_roc - pair_auc(&scores, &labels)).abs() < 1e-12);
        }

        #[test]
        fn label_symmetry(tp in 0u64..100, fp in 0u64..100, tn in 0u64..100, fn_ in 0u64..100) {
            let cm = ConfusionMatrix { tp, fp, tn, fn_ };
            prop_assume!(cm.total() > 0);
            let a = classification_metrics(&cm);
            let b = classification_metrics(&cm.swapped());
            prop_assert_eq!(a.precision_pos, b.precision_neg);
            prop_assert_eq!(a.recall_pos, b.recall_neg);
            prop_assert_eq!(a.f1_pos, b.f1_neg);
            prop_assert_eq!(a.accuracy, b.accuracy);
            prop_assert!((a.macro_f1 - b.macro_f1).abs() < 1e-15);
        }

        #[test]
        fn wilson_contains_point_and_narrows(k in 0u64..=50, n in 1u64..=50) {
            prop_assume!(k <= n);
            let ci = wilson_ci(k, n, Z_95).unwrap();
            prop_assert!(ci.lo <= ci.point && ci.point <= ci.hi);
            prop_assert!(ci.lo >= 0.0 && ci.hi <= 1.0);
            let wider = wilson_ci(2 * k, 2 * n, Z_95).unwrap();
            prop_assert!(wider.hi - wider.lo <= ci.hi - ci.lo + 1e-12);
        }
    }
}
