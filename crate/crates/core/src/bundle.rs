//! End-to-end runs and the reproducibility bundle they leave behind.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::calibration::{apply_threshold, calibrate_threshold, CalibrationResult};
use crate::dataset::{
    load_csv, read_ids, sample_balanced, split_dev_test, write_ids, FlowRecord, Label, Schema,
};
use crate::flags::{fit_rarity_table, FlagSet, FlagThresholds};
use crate::grammar::Probability;
use crate::inference::{BackendConfig, BackendKind, BatchItem, Client, InferenceOutcome};
use crate::metrics::{confusion, roc_pr_points, MetricsError, MetricsReport, DEFAULT_BOOTSTRAP_RESAMPLES};
use crate::prompt::{build_prompt, select_exemplars, PromptMode, PromptTemplate};
use crate::render::{FlowRenderer, FlowText, RenderPolicy};

pub const PROMPTS_DIR: &str = "prompts";
pub const GRAMMAR_FILE: &str = "grammar.gbnf";
pub const TEMPLATE_FILE: &str = "template.json";
pub const THRESHOLDS_FILE: &str = "thresholds.json";
pub const CALIBRATION_FILE: &str = "calibration.json";
pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const METRICS_FILE: &str = "metrics.json";
pub const CONFUSION_FILE: &str = "confusion.json";
pub const CURVES_FILE: &str = "curves.csv";
pub const IDS_FILE: &str = "ids.txt";
pub const CONFIG_FILE: &str = "config.json";
pub const MANIFEST_FILE: &str = "manifest.json";

pub const PREDICTIONS_HEADER: [&str; 6] = ["id", "label", "p_attack", "prediction", "latency_ms", "error"];

type BoxError = Box<dyn std::error::Error + Send + Sync + 'static>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Config,
    Ingest,
    Rarity,
    Sample,
    Split,
    Render,
    Prompt,
    Inference,
    Calibrate,
    Metrics,
    Bundle,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("stage serializes");
        f.write_str(s.as_str().expect("stage is a string"))
    }
}

#[derive(Debug, Error)]
#[error("{stage} stage failed: {source}")]
pub struct RunError {
    pub stage: Stage,
    #[source]
    pub source: BoxError,
}

trait AtStage<T> {
    fn at(self, stage: Stage) -> Result<T, RunError>;
}

impl<T, E: Into<BoxError>> AtStage<T> for Result<T, E> {
    fn at(self, stage: Stage) -> Result<T, RunError> {
        self.map_err(|e| RunError {
            stage,
            source: e.into(),
        })
    }
}

#[derive(Debug, Error)]
pub enum BundleError {
    #[error("bundle is incomplete: {0}")]
    IncompleteBundle(String),
    #[error("{file}: hash in manifest does not match content")]
    HashMismatch { file: String },
    #[error("{0} is listed in the manifest but missing")]
    MissingFile(String),
    #[error("{0} is present but not listed in the manifest")]
    UnlistedFile(String),
    #[error("leakage: {0}")]
    Leakage(String),
    #[error("predictions.csv line {line}: {reason}")]
    BadPredictions { line: usize, reason: String },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Dataset(#[from] crate::dataset::DatasetError),
}

/// Everything a run needs. Serialized into `config.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub train: PathBuf,
    pub test: PathBuf,
    pub out: PathBuf,
    /// Balanced subset size drawn from the test file, dev slice included.
    pub n: usize,
    pub dev_size: usize,
    pub sample_seed: u64,
    pub exemplar_seed: u64,
    pub bootstrap_seed: u64,
    pub bootstrap_resamples: usize,
    pub mode: PromptMode,
    pub thresholds: Option<PathBuf>,
    pub template: Option<PathBuf>,
    /// Column manifest for non-UNSW exports.
    pub schema: Option<PathBuf>,
    pub backend: BackendConfig,
}

impl RunConfig {
    pub fn new(train: impl Into<PathBuf>, test: impl Into<PathBuf>, out: impl Into<PathBuf>) -> Self {
        RunConfig {
            train: train.into(),
            test: test.into(),
            out: out.into(),
            n: 2000,
            dev_size: 300,
            sample_seed: 0,
            exemplar_seed: 0,
            bootstrap_seed: 0,
            bootstrap_resamples: DEFAULT_BOOTSTRAP_RESAMPLES,
            mode: PromptMode::FewShot { k_per_class: 1 },
            thresholds: None,
            template: None,
            schema: None,
            backend: BackendConfig::default(),
        }
    }

    fn check_inputs(&self) -> Result<(), BoxError> {
        for (what, p) in [("train", Some(&self.train)), ("test", Some(&self.test))]
            .into_iter()
            .chain([
                ("thresholds", self.thresholds.as_ref()),
                ("template", self.template.as_ref()),
                ("schema", self.schema.as_ref()),
            ])
        {
            if let Some(p) = p {
                if !p.is_file() {
                    return Err(format!("{what} file {} does not exist", p.display()).into());
                }
            }
        }
        self.mode.validate()?;
        self.backend.validate()?;
        Ok(())
    }
}

/// The `config.json` snapshot: the run config plus what it resolved to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigSnapshot {
    #[serde(flatten)]
    pub run: RunConfig,
    pub grammar_version: String,
    pub template_version: String,
    pub render_policy: RenderPolicy,
    pub exemplar_ids: Vec<u64>,
    pub crate_version: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum BundleStatus {
    Complete,
    Incomplete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub status: BundleStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failed_stage: Option<Stage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Relative path to lowercase hex SHA-256.
    pub files: BTreeMap<String, String>,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Self, BundleError> {
        let path = dir.join(MANIFEST_FILE);
        if !path.is_file() {
            return Err(BundleError::IncompleteBundle(format!("{MANIFEST_FILE} missing")));
        }
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRecord {
    #[serde(flatten)]
    pub result: CalibrationResult,
    /// Dev items that produced a verdict and entered the sweep.
    pub dev_scored: usize,
    pub dev_failed: usize,
    /// Dev items used as exemplars and therefore kept out of the sweep.
    pub dev_exemplars: usize,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

struct BundleWriter {
    dir: PathBuf,
    files: BTreeMap<String, String>,
}

impl BundleWriter {
    fn write(&mut self, rel: &str, bytes: &[u8]) -> std::io::Result<()> {
        let path = self.dir.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, bytes)?;
        self.files.insert(rel.to_string(), sha256_hex(bytes));
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<(), BoxError> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        Ok(self.write(rel, text.as_bytes())?)
    }

    fn finish(&mut self, status: BundleStatus, failure: Option<&RunError>) -> std::io::Result<Manifest> {
        let manifest = Manifest {
            status,
            failed_stage: failure.map(|e| e.stage),
            error: failure.map(|e| e.to_string()),
            files: self.files.clone(),
        };
        let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        text.push('\n');
        fs::write(self.dir.join(MANIFEST_FILE), text)?;
        Ok(manifest)
    }
}

/// Deletes the files a previous manifest in `dir` lists, and nothing else.
fn clear_previous(dir: &Path) -> Result<(), BoxError> {
    let path = dir.join(MANIFEST_FILE);
    if !path.is_file() {
        return Ok(());
    }
    let old: Manifest = serde_json::from_str(&fs::read_to_string(&path)?)?;
    for rel in old.files.keys() {
        let rel_path = Path::new(rel);
        if rel_path.is_absolute() || rel_path.components().any(|c| matches!(c, std::path::Component::ParentDir)) {
            continue;
        }
        let p = dir.join(rel_path);
        if p.is_file() {
            fs::remove_file(p)?;
        }
    }
    fs::remove_file(path)?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct EvalBundle {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub calibration: CalibrationRecord,
    pub metrics: MetricsReport,
    pub exemplar_ids: Vec<u64>,
}

/// Runs ingest through bundle. On failure the bundle written so far gets an
/// `INCOMPLETE` manifest naming the stage.
pub fn cmd_run(config: &RunConfig) -> Result<EvalBundle, RunError> {
    config.check_inputs().at(Stage::Config)?;
    fs::create_dir_all(&config.out).at(Stage::Config)?;
    clear_previous(&config.out).at(Stage::Config)?;
    let mut writer = BundleWriter {
        dir: config.out.clone(),
        files: BTreeMap::new(),
    };
    match run_stages(config, &mut writer) {
        Ok(mut bundle) => {
            bundle.manifest = writer.finish(BundleStatus::Complete, None).at(Stage::Bundle)?;
            Ok(bundle)
        }
        Err(e) => {
            log::error!("{e}");
            if let Err(io) = writer.finish(BundleStatus::Incomplete, Some(&e)) {
                log::error!("could not write incomplete manifest: {io}");
            }
            Err(e)
        }
    }
}

fn run_stages(config: &RunConfig, w: &mut BundleWriter) -> Result<EvalBundle, RunError> {
    let policy = RenderPolicy::default();
    let template = match &config.template {
        Some(p) => fs::read_to_string(p)
            .map_err(BoxError::from)
            .and_then(|t| PromptTemplate::from_json(&t).map_err(BoxError::from))
            .at(Stage::Config)?,
        None => PromptTemplate::default(),
    };
    let mut snapshot = ConfigSnapshot {
        run: config.clone(),
        grammar_version: config.backend.grammar.version.clone(),
        template_version: template.version.clone(),
        render_policy: policy.clone(),
        exemplar_ids: Vec::new(),
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
    };
    w.write_json(CONFIG_FILE, &snapshot).at(Stage::Bundle)?;

    log::info!("ingest: {} and {}", config.train.display(), config.test.display());
    let schema = match &config.schema {
        Some(p) => Schema::from_manifest(p).at(Stage::Ingest)?,
        None => Schema::unsw_nb15(),
    };
    let train = load_csv(&config.train, &schema).at(Stage::Ingest)?;
    let test = load_csv(&config.test, &schema).at(Stage::Ingest)?;

    let thresholds = match &config.thresholds {
        Some(p) => FlagThresholds::load(p).at(Stage::Rarity)?,
        None => FlagThresholds::default(),
    };
    thresholds.validate().at(Stage::Rarity)?;
    let rarity = fit_rarity_table(&train, &thresholds).at(Stage::Rarity)?;
    w.write_json(THRESHOLDS_FILE, &thresholds).at(Stage::Bundle)?;

    let subset = sample_balanced(&test, config.n, config.sample_seed).at(Stage::Sample)?;
    let (dev, held_out) = split_dev_test(&subset, config.dev_size, config.sample_seed).at(Stage::Split)?;
    let mut ids = Vec::new();
    write_ids(&mut ids, &dev, &held_out).at(Stage::Bundle)?;
    w.write(IDS_FILE, &ids).at(Stage::Bundle)?;
    let dev_records = dev.resolve(&test);
    let test_records = held_out.resolve(&test);
    log::info!("split: {} dev, {} test", dev_records.len(), test_records.len());

    let renderer = FlowRenderer::new(thresholds, rarity, policy);
    let render_all = |records: &[&FlowRecord]| -> Result<Vec<(FlowText, FlagSet)>, RunError> {
        records.iter().map(|r| renderer.render(r).at(Stage::Render)).collect()
    };
    let dev_rendered = render_all(&dev_records)?;
    let test_rendered = render_all(&test_records)?;

    let exemplars = match config.mode {
        PromptMode::FewShot { k_per_class } => {
            select_exemplars(&dev_records, k_per_class, config.exemplar_seed, &renderer).at(Stage::Prompt)?
        }
        _ => Vec::new(),
    };
    let exemplar_ids: BTreeSet<u64> = exemplars.iter().map(|e| e.record_id()).collect();
    snapshot.exemplar_ids = exemplars.iter().map(|e| e.record_id()).collect();
    w.write_json(CONFIG_FILE, &snapshot).at(Stage::Bundle)?;
    w.write(GRAMMAR_FILE, config.backend.grammar.gbnf_text.as_bytes()).at(Stage::Bundle)?;
    w.write_json(TEMPLATE_FILE, &template).at(Stage::Bundle)?;

    let mut items = Vec::new();
    let mut dev_labels = Vec::new();
    let dev_iter = dev_records.iter().zip(&dev_rendered).filter(|(r, _)| !exemplar_ids.contains(&r.id));
    for (record, (text, flags)) in dev_iter {
        dev_labels.push(record.label);
        items.push(make_item(config, &template, &exemplars, record, text, flags, w)?);
    }
    let n_dev = items.len();
    for (record, (text, flags)) in test_records.iter().zip(&test_rendered) {
        items.push(make_item(config, &template, &exemplars, record, text, flags, w)?);
    }

    log::info!("inference: {} prompts on the {:?} backend", items.len(), config.backend.kind);
    let client = Client::new(config.backend.clone()).at(Stage::Inference)?;
    let outcomes = client.classify_batch(&items);
    let (dev_out, test_out) = outcomes.split_at(n_dev);

    let mut dev_scores = Vec::new();
    let mut dev_scored_labels = Vec::new();
    for (o, label) in dev_out.iter().zip(&dev_labels) {
        if let Some(v) = o.verdict() {
            dev_scores.push(v.p_attack.as_f64());
            dev_scored_labels.push(*label);
        }
    }
    let result = calibrate_threshold(&dev_scores, &dev_scored_labels).at(Stage::Calibrate)?;
    let calibration = CalibrationRecord {
        dev_scored: dev_scores.len(),
        dev_failed: n_dev - dev_scores.len(),
        dev_exemplars: exemplar_ids.len(),
        result,
    };
    w.write_json(CALIBRATION_FILE, &calibration).at(Stage::Bundle)?;
    let tau = calibration.result.tau_star;
    log::info!("calibrate: tau* = {tau}, dev F1 = {:.4}", calibration.result.dev_f1);

    let rows: Vec<PredictionRow> = test_records
        .iter()
        .zip(test_out)
        .map(|(r, o)| PredictionRow::from_outcome(r.label, o, tau))
        .collect();
    let mut csv_bytes = Vec::new();
    write_predictions(&mut csv_bytes, &rows).at(Stage::Bundle)?;
    w.write(PREDICTIONS_FILE, &csv_bytes).at(Stage::Bundle)?;

    let metrics = write_metric_files(w, &rows, Some(tau), config.bootstrap_resamples, config.bootstrap_seed)?;
    Ok(EvalBundle {
        dir: config.out.clone(),
        manifest: Manifest {
            status: BundleStatus::Incomplete,
            failed_stage: None,
            error: None,
            files: BTreeMap::new(),
        },
        calibration,
        metrics,
        exemplar_ids: snapshot.exemplar_ids,
    })
}

fn make_item(
    config: &RunConfig,
    template: &PromptTemplate,
    exemplars: &[crate::prompt::Exemplar],
    record: &FlowRecord,
    text: &FlowText,
    flags: &FlagSet,
    w: &mut BundleWriter,
) -> Result<BatchItem, RunError> {
    let prompt = build_prompt(config.mode, text, template, exemplars).at(Stage::Prompt)?;
    w.write(&format!("{PROMPTS_DIR}/{}.txt", record.id), prompt.as_bytes())
        .at(Stage::Bundle)?;
    Ok(BatchItem {
        record_id: record.id,
        prompt,
        flags: *flags,
    })
}

fn write_metric_files(
    w: &mut BundleWriter,
    rows: &[PredictionRow],
    tau: Option<f64>,
    resamples: usize,
    seed: u64,
) -> Result<MetricsReport, RunError> {
    let labels: Vec<Label> = rows.iter().map(|r| r.label).collect();
    let preds: Vec<Label> = rows.iter().map(|r| r.prediction).collect();
    let scores: Vec<f64> = rows.iter().map(PredictionRow::score).collect();
    let report = MetricsReport::compute(&labels, &preds, Some(&scores), tau, resamples, seed).at(Stage::Metrics)?;
    let cm = confusion(&labels, &preds).at(Stage::Metrics)?;
    w.write_json(METRICS_FILE, &report.rounded()).at(Stage::Bundle)?;
    w.write_json(CONFUSION_FILE, &cm).at(Stage::Bundle)?;
    let mut curves = Vec::new();
    match roc_pr_points(&scores, &labels) {
        Ok(c) => c.write_csv(&mut curves).at(Stage::Bundle)?,
        Err(MetricsError::SingleClass) => curves.extend_from_slice(b"threshold,fpr,tpr,precision,recall\n"),
        Err(e) => return Err(e).at(Stage::Metrics),
    }
    w.write(CURVES_FILE, &curves).at(Stage::Bundle)?;
    Ok(report)
}

/// One `predictions.csv` row. `prediction` is the calibrated decision;
/// items without a verdict count as benign with score 0.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow {
    pub id: u64,
    pub label: Label,
    pub p_attack: Option<Probability>,
    pub prediction: Label,
    pub latency_ms: f64,
    pub error: String,
}

impl PredictionRow {
    pub fn from_outcome(label: Label, o: &InferenceOutcome, tau: f64) -> Self {
        match &o.result {
            Ok(v) => PredictionRow {
                id: o.record_id,
                label,
                p_attack: Some(v.p_attack),
                prediction: apply_threshold(&[v.p_attack.as_f64()], tau)[0],
                latency_ms: o.latency_ms,
                error: String::new(),
            },
            Err(e) => PredictionRow {
                id: o.record_id,
                label,
                p_attack: None,
                prediction: Label::Benign,
                latency_ms: o.latency_ms,
                error: format!("{}: {e}", e.kind()),
            },
        }
    }

    pub fn score(&self) -> f64 {
        self.p_attack.map_or(0.0, Probability::as_f64)
    }
}

fn prediction_word(l: Label) -> &'static str {
    if l.is_attack() {
        "attack"
    } else {
        "benign"
    }
}

pub fn write_predictions<W: std::io::Write>(w: W, rows: &[PredictionRow]) -> Result<(), csv::Error> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(PREDICTIONS_HEADER)?;
    for r in rows {
        out.write_record([
            r.id.to_string(),
            r.label.to_string(),
            r.p_attack.map(|p| p.to_string()).unwrap_or_default(),
            prediction_word(r.prediction).to_string(),
            format!("{:.3}", r.latency_ms),
            r.error.clone(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRow>, BundleError> {
    let mut reader = csv::Reader::from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header != PREDICTIONS_HEADER {
        return Err(BundleError::BadPredictions {
            line: 1,
            reason: format!("header must be {}", PREDICTIONS_HEADER.join(",")),
        });
    }
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let bad = |reason: String| BundleError::BadPredictions { line, reason };
        let id = rec[0].parse().map_err(|_| bad(format!("bad id {:?}", &rec[0])))?;
        let label = match &rec[1] {
            "0" => Label::Benign,
            "1" => Label::Attack,
            other => return Err(bad(format!("bad label {other:?}"))),
        };
        let p_attack = match &rec[2] {
            "" => None,
            s => {
                let p: f64 = s.parse().map_err(|_| bad(format!("bad p_attack {s:?}")))?;
                if !(0.0..=1.0).contains(&p) {
                    return Err(bad(format!("p_attack {p} outside [0, 1]")));
                }
                Some(Probability::from_f64(p))
            }
        };
        let prediction = match &rec[3] {
            "attack" => Label::Attack,
            "benign" => Label::Benign,
            other => return Err(bad(format!("bad prediction {other:?}"))),
        };
        let latency_ms = match &rec[4] {
            "" => 0.0,
            s => s.parse().map_err(|_| bad(format!("bad latency {s:?}")))?,
        };
        rows.push(PredictionRow {
            id,
            label,
            p_attack,
            prediction,
            latency_ms,
            error: rec[5].to_string(),
        });
    }
    Ok(rows)
}

/// Scores and labels from any CSV with `p_attack` and `label` columns,
/// skipping rows without a score.
pub fn read_scored_csv(path: &Path) -> Result<(Vec<f64>, Vec<Label>), BundleError> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| BundleError::BadPredictions {
                line: 1,
                reason: format!("missing column {name}"),
            })
    };
    let (pi, li) = (col("p_attack")?, col("label")?);
    let (mut scores, mut labels) = (Vec::new(), Vec::new());
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let bad = |reason: String| BundleError::BadPredictions { line: i + 2, reason };
        let s = rec.get(pi).unwrap_or("").trim();
        if s.is_empty() {
            continue;
        }
        scores.push(s.parse().map_err(|_| bad(format!("bad p_attack {s:?}")))?);
        labels.push(match rec.get(li).unwrap_or("").trim() {
            "0" => Label::Benign,
            "1" => Label::Attack,
            other => return Err(bad(format!("bad label {other:?}"))),
        });
    }
    Ok((scores, labels))
}

fn read_snapshot(dir: &Path) -> Result<ConfigSnapshot, BundleError> {
    Ok(serde_json::from_str(&fs::read_to_string(dir.join(CONFIG_FILE))?)?)
}

/// Recomputes all metrics from `predictions.csv` alone. With `write`, the
/// metric files and manifest are refreshed to match.
pub fn evaluate_bundle(dir: &Path, write: bool) -> Result<MetricsReport, BundleError> {
    let rows = read_predictions(&dir.join(PREDICTIONS_FILE))?;
    let (resamples, seed) = match read_snapshot(dir) {
        Ok(s) => (s.run.bootstrap_resamples, s.run.bootstrap_seed),
        Err(_) => (DEFAULT_BOOTSTRAP_RESAMPLES, 0),
    };
    let tau = fs::read_to_string(dir.join(CALIBRATION_FILE))
        .ok()
        .and_then(|t| serde_json::from_str::<CalibrationRecord>(&t).ok())
        .map(|c| c.result.tau_star);
    if !write {
        let labels: Vec<Label> = rows.iter().map(|r| r.label).collect();
        let preds: Vec<Label> = rows.iter().map(|r| r.prediction).collect();
        let scores: Vec<f64> = rows.iter().map(PredictionRow::score).collect();
        return Ok(MetricsReport::compute(&labels, &preds, Some(&scores), tau, resamples, seed)?);
    }
    let mut files = Manifest::load(dir).map(|m| m.files).unwrap_or_default();
    let mut w = BundleWriter {
        dir: dir.to_path_buf(),
        files: BTreeMap::new(),
    };
    let report = write_metric_files(&mut w, &rows, tau, resamples, seed).map_err(|e| match e.source.downcast::<MetricsError>() {
        Ok(m) => BundleError::Metrics(*m),
        Err(other) => BundleError::IncompleteBundle(other.to_string()),
    })?;
    let pred_bytes = fs::read(dir.join(PREDICTIONS_FILE))?;
    files.insert(PREDICTIONS_FILE.to_string(), sha256_hex(&pred_bytes));
    files.extend(w.files);
    w.files = files;
    w.finish(BundleStatus::Complete, None)?;
    Ok(report)
}

fn walk(dir: &Path, base: &Path, out: &mut BTreeSet<String>) -> std::io::Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            walk(&path, base, out)?;
        } else {
            let rel = path.strip_prefix(base).expect("under base");
            out.insert(rel.to_string_lossy().replace('\\', "/"));
        }
    }
    Ok(())
}

/// Checks hashes, that the file set equals the manifest, the row count, and
/// that no dev or exemplar ID reaches the test predictions.
pub fn verify_bundle(dir: &Path) -> Result<Manifest, BundleError> {
    let manifest = Manifest::load(dir)?;
    if manifest.status != BundleStatus::Complete {
        return Err(BundleError::IncompleteBundle(
            manifest.error.clone().unwrap_or_else(|| "status INCOMPLETE".into()),
        ));
    }
    for (rel, hash) in &manifest.files {
        let bytes = fs::read(dir.join(rel)).map_err(|_| BundleError::MissingFile(rel.clone()))?;
        if &sha256_hex(&bytes) != hash {
            return Err(BundleError::HashMismatch { file: rel.clone() });
        }
    }
    let mut present = BTreeSet::new();
    walk(dir, dir, &mut present)?;
    present.remove(MANIFEST_FILE);
    if let Some(extra) = present.iter().find(|p| !manifest.files.contains_key(*p)) {
        return Err(BundleError::UnlistedFile(extra.clone()));
    }

    let ids = read_ids(&fs::read_to_string(dir.join(IDS_FILE))?)?;
    let dev: BTreeSet<u64> = ids.get("dev").into_iter().flatten().copied().collect();
    let test: BTreeSet<u64> = ids.get("test").into_iter().flatten().copied().collect();
    let rows = read_predictions(&dir.join(PREDICTIONS_FILE))?;
    if rows.len() != test.len() {
        return Err(BundleError::IncompleteBundle(format!(
            "{} predictions for {} test IDs",
            rows.len(),
            test.len()
        )));
    }
    if let Some(r) = rows.iter().find(|r| dev.contains(&r.id)) {
        return Err(BundleError::Leakage(format!("dev ID {} has a test prediction", r.id)));
    }
    let snapshot = read_snapshot(dir)?;
    if let Some(id) = snapshot.exemplar_ids.iter().find(|id| test.contains(id)) {
        return Err(BundleError::Leakage(format!("exemplar ID {id} is in the test section")));
    }
    Ok(manifest)
}

/// Backend label for reports, e.g. `mock` or the remote model name.
pub fn backend_label(config: &BackendConfig) -> String {
    match config.kind {
        BackendKind::Mock => "mock".to_string(),
        BackendKind::Remote => config.model_name.clone(),
    }
}

pub(crate) fn load_snapshot(dir: &Path) -> Option<ConfigSnapshot> {
    read_snapshot(dir).ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{write_csv, DatasetError};
    use crate::synth::{generate, SynthConfig};

    pub(crate) fn synth_files(dir: &Path, n: usize, seed: u64) -> (PathBuf, PathBuf) {
        let data = generate(&SynthConfig {
            n_train: n,
            n_test: n,
            seed,
            ..Default::default()
        });
        let schema = Schema::unsw_nb15();
        let (train, test) = (dir.join("train.csv"), dir.join("test.csv"));
        write_csv(fs::File::create(&train).unwrap(), &schema, &data.train).unwrap();
        write_csv(fs::File::create(&test).unwrap(), &schema, &data.test).unwrap();
        (train, test)
    }

    fn small_config(dir: &Path) -> RunConfig {
        let (train, test) = synth_files(dir, 400, 1);
        RunConfig {
            n: 120,
            dev_size: 40,
            bootstrap_resamples: 200,
            ..RunConfig::new(train, test, dir.join("bundle"))
        }
    }

    #[test]
    fn complete_run_verifies() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = small_config(tmp.path());
        let b = cmd_run(&cfg).unwrap();
        assert_eq!(b.manifest.status, BundleStatus::Complete);
        assert_eq!(b.exemplar_ids.len(), 2);
        let m = verify_bundle(&cfg.out).unwrap();
        for f in [GRAMMAR_FILE, TEMPLATE_FILE, THRESHOLDS_FILE, CALIBRATION_FILE, PREDICTIONS_FILE, METRICS_FILE, CONFUSION_FILE, CURVES_FILE, IDS_FILE, CONFIG_FILE] {
            assert!(m.files.contains_key(f), "{f}");
        }
        assert_eq!(read_predictions(&cfg.out.join(PREDICTIONS_FILE)).unwrap().len(), 80);
        let again = evaluate_bundle(&cfg.out, false).unwrap();
        assert_eq!(again.rounded(), b.metrics.rounded());
    }

    #[test]
    fn rerun_is_byte_identical() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = small_config(tmp.path());
        cmd_run(&cfg).unwrap();
        let first = fs::read(cfg.out.join(PREDICTIONS_FILE)).unwrap();
        cmd_run(&cfg).unwrap();
        assert_eq!(first, fs::read(cfg.out.join(PREDICTIONS_FILE)).unwrap());
        verify_bundle(&cfg.out).unwrap();
    }

    #[test]
    fn dev_too_large_names_split_stage() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = RunConfig {
            dev_size: 120,
            ..small_config(tmp.path())
        };
        let err = cmd_run(&cfg).unwrap_err();
        assert_eq!(err.stage, Stage::Split);
        assert!(matches!(
            err.source.downcast_ref::<DatasetError>(),
            Some(DatasetError::DevTooLarge { .. })
        ));
        let m = Manifest::load(&cfg.out).unwrap();
        assert_eq!(m.status, BundleStatus::Incomplete);
        assert_eq!(m.failed_stage, Some(Stage::Split));
        assert!(matches!(verify_bundle(&cfg.out), Err(BundleError::IncompleteBundle(_))));
    }

    #[test]
    fn missing_input_is_config_error() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = RunConfig::new(tmp.path().join("nope.csv"), tmp.path().join("nope.csv"), tmp.path().join("b"));
        assert_eq!(cmd_run(&cfg).unwrap_err().stage, Stage::Config);
    }

    #[test]
    fn tampering_is_detected() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = small_config(tmp.path());
        cmd_run(&cfg).unwrap();
        fs::write(cfg.out.join(CURVES_FILE), "x").unwrap();
        assert!(matches!(verify_bundle(&cfg.out), Err(BundleError::HashMismatch { .. })));
        fs::write(cfg.out.join("extra.txt"), "x").unwrap();
        cmd_run(&cfg).unwrap();
        assert!(matches!(verify_bundle(&cfg.out), Err(BundleError::UnlistedFile(_))));
    }

    #[test]
    fn stage_names() {
        assert_eq!(Stage::Split.to_string(), "split");
        assert_eq!(Stage::Inference.to_string(), "inference");
    }
}
