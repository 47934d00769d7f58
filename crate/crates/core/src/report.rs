//! Text report for a finished bundle, alongside published reference rows.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bundle::{backend_label, load_snapshot, BundleError, BundleStatus, Manifest, METRICS_FILE};
use crate::metrics::{IntervalEstimate, MetricsReport};
use crate::render::format_fixed;

/// Published numbers, carried verbatim as strings.
pub const REFERENCE_RESULTS_JSON: &str = include_str!("../assets/reference_results.json");

const MISSING: &str = "—";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceRow {
    pub name: String,
    pub kind: String,
    pub accuracy: Option<String>,
    pub precision_pos: Option<String>,
    pub recall_pos: Option<String>,
    pub f1_pos: Option<String>,
    pub macro_f1: Option<String>,
}

impl ReferenceRow {
    pub fn cells(&self) -> [&str; 5] {
        [&self.accuracy, &self.precision_pos, &self.recall_pos, &self.f1_pos, &self.macro_f1]
            .map(|c| c.as_deref().unwrap_or(MISSING))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceTables {
    pub tabular: Vec<ReferenceRow>,
    pub llm: Vec<ReferenceRow>,
}

pub fn reference_tables() -> ReferenceTables {
    serde_json::from_str(REFERENCE_RESULTS_JSON).expect("bundled reference table parses")
}

fn table_row(out: &mut String, name: &str, kind: &str, cells: [&str; 5]) {
    let _ = writeln!(out, "| {name} | {kind} | {} |", cells.join(" | "));
}

fn interval(ci: &IntervalEstimate) -> String {
    format!("[{}, {}]", format_fixed(ci.lo, 4), format_fixed(ci.hi, 4))
}

/// Renders the metrics table for `bundle_dir`: this run first, then the
/// reference rows. Requires a complete bundle with `metrics.json`.
pub fn cmd_report(bundle_dir: &Path) -> Result<String, BundleError> {
    let manifest = Manifest::load(bundle_dir)?;
    if manifest.status != BundleStatus::Complete {
        return Err(BundleError::IncompleteBundle(format!(
            "run stopped at stage {}",
            manifest.failed_stage.map_or("unknown".to_string(), |s| s.to_string())
        )));
    }
    let metrics_path = bundle_dir.join(METRICS_FILE);
    if !metrics_path.is_file() {
        return Err(BundleError::IncompleteBundle(format!("{METRICS_FILE} missing")));
    }
    let report: MetricsReport = serde_json::from_str(&fs::read_to_string(metrics_path)?)?;
    let snapshot = load_snapshot(bundle_dir);

    let (run_name, run_kind) = match &snapshot {
        Some(s) => (
            format!("This run ({})", backend_label(&s.run.backend)),
            format!("Prompt-only ({})", s.run.mode),
        ),
        None => ("This run".to_string(), "Prompt-only".to_string()),
    };
    let m = &report.metrics;
    let f = |v: f64| format_fixed(v, 4);

    let mut out = String::new();
    let _ = writeln!(out, "# Evaluation report\n");
    let _ = writeln!(out, "| Model / Run | Type | Accuracy | Precision (+) | Recall (+) | F1 (+) | Macro-F1 |");
    let _ = writeln!(out, "|---|---|---|---|---|---|---|");
    let cells = [f(m.accuracy), f(m.precision_pos), f(m.recall_pos), f(m.f1_pos), f(m.macro_f1)];
    table_row(&mut out, &run_name, &run_kind, cells.each_ref().map(String::as_str));

    let refs = reference_tables();
    for (title, rows) in [("tabular reference", &refs.tabular), ("LLM reference", &refs.llm)] {
        let _ = writeln!(out, "| *{title}* | | | | | | |");
        for r in rows {
            table_row(&mut out, &r.name, &r.kind, r.cells());
        }
    }

    let _ = writeln!(out);
    let _ = writeln!(out, "- test items: {}", report.n);
    if let Some(tau) = report.tau {
        let _ = writeln!(out, "- operating threshold: {tau}");
    }
    let _ = writeln!(out, "- accuracy 95% Wilson interval: {}", interval(&report.accuracy_ci));
    let _ = writeln!(
        out,
        "- F1 (+) 95% bootstrap interval: {} ({} resamples)",
        interval(&report.f1_ci),
        report.bootstrap_resamples
    );
    if let Some(auc) = report.auc_roc {
        let _ = writeln!(out, "- ROC AUC: {}", f(auc));
    }
    let _ = writeln!(out, "- reference rows are published figures, not recomputed here");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_rows_parse() {
        let t = reference_tables();
        assert_eq!(t.tabular.len(), 8);
        assert_eq!(t.llm.len(), 8);
        let xgb = t.tabular.iter().find(|r| r.name == "XGBoost (Balanced, Light)").unwrap();
        assert_eq!(xgb.accuracy.as_deref(), Some("0.9528"));
    }

    #[test]
    fn missing_bundle_is_incomplete() {
        let tmp = tempfile::tempdir().unwrap();
        assert!(matches!(cmd_report(tmp.path()), Err(BundleError::IncompleteBundle(_))));
    }
}
