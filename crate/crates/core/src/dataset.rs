//! UNSW-NB15 style flow tables: schema handling, CSV ingest, and the
//! deterministic balanced / dev / test selections used by every run.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seeding::{pick_ranked, SALT_BALANCED, SALT_DEV};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("schema manifest: {0}")]
    Manifest(#[from] serde_json::Error),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("row {row}, column `{column}`: bad value {value:?} ({reason})")]
    BadValue {
        row: usize,
        column: String,
        value: String,
        reason: &'static str,
    },
    #[error("row {row}: duplicate id {id}")]
    DuplicateId { row: usize, id: u64 },
    #[error("file has no data rows")]
    EmptyFile,
    #[error("class {label} has {available} records, {needed} needed")]
    InsufficientClass {
        label: Label,
        available: usize,
        needed: usize,
    },
    #[error("subset size must be even, got {0}")]
    OddN(usize),
    #[error("subset size must be positive")]
    ZeroSize,
    #[error("dev size {dev_size} must be smaller than the subset ({subset_size})")]
    DevTooLarge { dev_size: usize, subset_size: usize },
    #[error("dev size must be positive")]
    ZeroDevSize,
    #[error("malformed ids file at line {line}: {text:?}")]
    BadIdsFile { line: usize, text: String },
}

/// Binary ground truth; attack is the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Label {
    Benign,
    Attack,
}

impl Label {
    pub fn from_bit(bit: u8) -> Option<Label> {
        match bit {
            0 => Some(Label::Benign),
            1 => Some(Label::Attack),
            _ => None,
        }
    }

    pub fn bit(self) -> u8 {
        match self {
            Label::Benign => 0,
            Label::Attack => 1,
        }
    }

    pub fn is_attack(self) -> bool {
        self == Label::Attack
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.bit())
    }
}

impl Serialize for Label {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(self.bit())
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let bit = u8::deserialize(d)?;
        Label::from_bit(bit).ok_or_else(|| serde::de::Error::custom("label must be 0 or 1"))
    }
}

/// Numeric columns beyond the ones the flag rules read directly. Names are
/// shared by every record loaded from the same file.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtraNumeric {
    names: Arc<[String]>,
    values: Vec<f64>,
}

impl ExtraNumeric {
    pub fn new(names: Arc<[String]>, values: Vec<f64>) -> Self {
        assert_eq!(names.len(), values.len(), "extra numeric names/values length");
        ExtraNumeric { names, values }
    }

    pub fn empty() -> Self {
        ExtraNumeric {
            names: Arc::from(Vec::<String>::new()),
            values: Vec::new(),
        }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.values[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.names.iter().map(String::as_str).zip(self.values.iter().copied())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// One flow row.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowRecord {
    pub id: u64,
    pub dur: f64,
    pub proto: String,
    pub service: String,
    pub state: String,
    pub spkts: u64,
    pub dpkts: u64,
    pub sbytes: u64,
    pub dbytes: u64,
    pub sttl: u8,
    pub dttl: u8,
    pub tcprtt: f64,
    pub synack: f64,
    pub ackdat: f64,
    pub ct_state_ttl: u64,
    pub extra_numeric: ExtraNumeric,
    pub label: Label,
}

/// The numeric columns a [`FlowRecord`] carries as named fields, in
/// canonical order.
pub const CORE_NUMERIC: [&str; 11] = [
    "dur",
    "spkts",
    "dpkts",
    "sbytes",
    "dbytes",
    "sttl",
    "dttl",
    "tcprtt",
    "synack",
    "ackdat",
    "ct_state_ttl",
];

pub const CATEGORICAL: [&str; 3] = ["proto", "service", "state"];

/// The remaining 28 numeric columns of the official UNSW-NB15 train/test
/// files, in header order.
pub const UNSW_EXTRA_NUMERIC: [&str; 28] = [
    "rate",
    "sload",
    "dload",
    "sloss",
    "dloss",
    "sinpkt",
    "dinpkt",
    "sjit",
    "djit",
    "swin",
    "stcpb",
    "dtcpb",
    "dwin",
    "smean",
    "dmean",
    "trans_depth",
    "response_body_len",
    "ct_srv_src",
    "ct_dst_ltm",
    "ct_src_dport_ltm",
    "ct_dst_sport_ltm",
    "ct_dst_src_ltm",
    "is_ftp_login",
    "ct_ftp_cmd",
    "ct_flw_http_mthd",
    "ct_src_ltm",
    "ct_srv_dst",
    "is_sm_ips_ports",
];

impl FlowRecord {
    /// All numeric features in canonical order: the core columns followed by
    /// the extra columns.
    pub fn numeric_features(&self) -> Vec<(&str, f64)> {
        let core = [
            self.dur,
            self.spkts as f64,
            self.dpkts as f64,
            self.sbytes as f64,
            self.dbytes as f64,
            f64::from(self.sttl),
            f64::from(self.dttl),
            self.tcprtt,
            self.synack,
            self.ackdat,
            self.ct_state_ttl as f64,
        ];
        CORE_NUMERIC
            .iter()
            .copied()
            .zip(core)
            .chain(self.extra_numeric.iter())
            .collect()
    }

    pub fn numeric_value(&self, name: &str) -> Option<f64> {
        self.numeric_features()
            .into_iter()
            .find(|(n, _)| *n == name)
            .map(|(_, v)| v)
    }

    pub fn categorical(&self, name: &str) -> Option<&str> {
        match name {
            "proto" => Some(&self.proto),
            "service" => Some(&self.service),
            "state" => Some(&self.state),
            _ => None,
        }
    }
}

/// Expected columns plus header aliases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    #[serde(default = "default_extra_numeric")]
    pub extra_numeric: Vec<String>,
    /// Alias header (compared lower-cased) → canonical column name.
    #[serde(default)]
    pub aliases: BTreeMap<String, String>,
}

fn default_extra_numeric() -> Vec<String> {
    UNSW_EXTRA_NUMERIC.iter().map(|s| s.to_string()).collect()
}

impl Default for Schema {
    fn default() -> Self {
        Schema::unsw_nb15()
    }
}

impl Schema {
    /// The official 39-numeric / 3-categorical layout.
    pub fn unsw_nb15() -> Self {
        Schema {
            extra_numeric: default_extra_numeric(),
            aliases: BTreeMap::new(),
        }
    }

    /// Only the columns the flag and render stages need.
    pub fn core_only() -> Self {
        Schema {
            extra_numeric: Vec::new(),
            aliases: BTreeMap::new(),
        }
    }

    pub fn from_manifest(path: &Path) -> Result<Self, DatasetError> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Every column the loader requires, in canonical output order.
    pub fn columns(&self) -> Vec<String> {
        let mut cols = vec!["id".to_string()];
        cols.push("dur".into());
        cols.extend(CATEGORICAL.iter().map(|s| s.to_string()));
        cols.extend(CORE_NUMERIC.iter().skip(1).map(|s| s.to_string()));
        cols.extend(self.extra_numeric.iter().cloned());
        cols.push("label".into());
        cols
    }

    fn canonical_header(&self, raw: &str) -> String {
        let lowered = raw.trim().trim_start_matches('\u{feff}').to_lowercase();
        self.aliases
            .iter()
            .find(|(alias, _)| alias.to_lowercase() == lowered)
            .map(|(_, canon)| canon.clone())
            .unwrap_or(lowered)
    }
}

pub fn load_csv(path: &Path, schema: &Schema) -> Result<Vec<FlowRecord>, DatasetError> {
    let file = std::fs::File::open(path)?;
    read_csv(file, schema)
}

pub fn read_csv<R: Read>(reader: R, schema: &Schema) -> Result<Vec<FlowRecord>, DatasetError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].trim().is_empty()) {
        return Err(DatasetError::EmptyFile);
    }
    let index: HashMap<String, usize> = headers
        .iter()
        .enumerate()
        .map(|(i, h)| (schema.canonical_header(h), i))
        .collect();
    let col = |name: &str| {
        index
            .get(name)
            .copied()
            .ok_or_else(|| DatasetError::MissingColumn(name.to_string()))
    };
    let columns = schema.columns();
    let positions: Vec<usize> = columns.iter().map(|c| col(c)).collect::<Result<_, _>>()?;
    let pos: HashMap<&str, usize> = columns.iter().map(String::as_str).zip(positions).collect();
    let extra_names: Arc<[String]> = Arc::from(schema.extra_numeric.clone());

    let mut records = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let n = i + 1;
        let field = |name: &str| row.get(pos[name]).unwrap_or("").trim();
        let p = FieldParser { row: n };

        let id = p.uint(field("id"), "id")?;
        if !seen.insert(id) {
            return Err(DatasetError::DuplicateId { row: n, id });
        }
        let extra = schema
            .extra_numeric
            .iter()
            .map(|c| p.real(field(c), c))
            .collect::<Result<Vec<_>, _>>()?;
        let label_raw = field("label");
        let label = label_raw
            .parse::<u8>()
            .ok()
            .and_then(Label::from_bit)
            .ok_or_else(|| p.bad("label", label_raw, "label must be 0 or 1"))?;

        records.push(FlowRecord {
            id,
            dur: p.nonneg_real(field("dur"), "dur")?,
            proto: p.category(field("proto"), "proto")?,
            service: p.category(field("service"), "service")?,
            state: p.category(field("state"), "state")?,
            spkts: p.uint(field("spkts"), "spkts")?,
            dpkts: p.uint(field("dpkts"), "dpkts")?,
            sbytes: p.uint(field("sbytes"), "sbytes")?,
            dbytes: p.uint(field("dbytes"), "dbytes")?,
            sttl: p.ttl(field("sttl"), "sttl")?,
            dttl: p.ttl(field("dttl"), "dttl")?,
            tcprtt: p.nonneg_real(field("tcprtt"), "tcprtt")?,
            synack: p.nonneg_real(field("synack"), "synack")?,
            ackdat: p.nonneg_real(field("ackdat"), "ackdat")?,
            ct_state_ttl: p.uint(field("ct_state_ttl"), "ct_state_ttl")?,
            extra_numeric: ExtraNumeric::new(extra_names.clone(), extra),
            label,
        });
    }
    if records.is_empty() {
        return Err(DatasetError::EmptyFile);
    }
    Ok(records)
}

struct FieldParser {
    row: usize,
}

impl FieldParser {
    fn bad(&self, column: &str, value: &str, reason: &'static str) -> DatasetError {
        DatasetError::BadValue {
            row: self.row,
            column: column.to_string(),
            value: value.to_string(),
            reason,
        }
    }

    fn real(&self, s: &str, column: &str) -> Result<f64, DatasetError> {
        match s.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(self.bad(column, s, "expected a finite number")),
        }
    }

    fn nonneg_real(&self, s: &str, column: &str) -> Result<f64, DatasetError> {
        let v = self.real(s, column)?;
        if v < 0.0 {
            return Err(self.bad(column, s, "must be non-negative"));
        }
        Ok(v)
    }

    fn uint(&self, s: &str, column: &str) -> Result<u64, DatasetError> {
        if let Ok(v) = s.parse::<u64>() {
            return Ok(v);
        }
        // Some mirrors export integer columns as `12.0`.
        match s.parse::<f64>() {
            Ok(v) if v >= 0.0 && v.fract() == 0.0 && v < 1.8e19 => Ok(v as u64),
            Ok(v) if v < 0.0 => Err(self.bad(column, s, "must be non-negative")),
            _ => Err(self.bad(column, s, "expected a non-negative integer")),
        }
    }

    fn ttl(&self, s: &str, column: &str) -> Result<u8, DatasetError> {
        let v = self.uint(s, column)?;
        u8::try_from(v).map_err(|_| self.bad(column, s, "TTL must lie in 0..=255"))
    }

    fn category(&self, s: &str, column: &str) -> Result<String, DatasetError> {
        if s.is_empty() {
            return Err(self.bad(column, s, "empty category"));
        }
        if s.chars().any(|c| c.is_whitespace() || c == '=' || c.is_control()) {
            return Err(self.bad(column, s, "category may not contain whitespace or '='"));
        }
        Ok(s.to_string())
    }
}

/// Writes records with the canonical header for `schema`. Reals use the
/// shortest round-trip representation, so `read_csv` restores them exactly.
pub fn write_csv<W: Write>(
    writer: W,
    schema: &Schema,
    records: &[FlowRecord],
) -> Result<(), DatasetError> {
    let mut w = csv::Writer::from_writer(writer);
    let columns = schema.columns();
    w.write_record(&columns)?;
    for r in records {
        let mut row: Vec<String> = Vec::with_capacity(columns.len());
        for c in &columns {
            let cell = match c.as_str() {
                "id" => r.id.to_string(),
                "label" => r.label.to_string(),
                "proto" | "service" | "state" => r.categorical(c).unwrap_or_default().to_string(),
                "dur" => r.dur.to_string(),
                "spkts" => r.spkts.to_string(),
                "dpkts" => r.dpkts.to_string(),
                "sbytes" => r.sbytes.to_string(),
                "dbytes" => r.dbytes.to_string(),
                "sttl" => r.sttl.to_string(),
                "dttl" => r.dttl.to_string(),
                "tcprtt" => r.tcprtt.to_string(),
                "synack" => r.synack.to_string(),
                "ackdat" => r.ackdat.to_string(),
                "ct_state_ttl" => r.ct_state_ttl.to_string(),
                other => r
                    .extra_numeric
                    .get(other)
                    .ok_or_else(|| DatasetError::MissingColumn(other.to_string()))?
                    .to_string(),
            };
            row.push(cell);
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// A recorded set of row IDs with their labels, sorted by ID.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsetSelection {
    pub ids: Vec<u64>,
    pub labels: Vec<Label>,
    pub seed: u64,
    pub class_counts: BTreeMap<Label, usize>,
}

impl SubsetSelection {
    fn from_members(mut members: Vec<(u64, Label)>, seed: u64) -> Self {
        members.sort_unstable_by_key(|&(id, _)| id);
        let mut class_counts = BTreeMap::from([(Label::Benign, 0), (Label::Attack, 0)]);
        for (_, l) in &members {
            *class_counts.entry(*l).or_default() += 1;
        }
        let (ids, labels) = members.into_iter().unzip();
        SubsetSelection {
            ids,
            labels,
            seed,
            class_counts,
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn count(&self, label: Label) -> usize {
        self.class_counts.get(&label).copied().unwrap_or(0)
    }

    pub fn is_balanced(&self) -> bool {
        self.count(Label::Benign) == self.count(Label::Attack)
    }

    pub fn members(&self) -> impl Iterator<Item = (u64, Label)> + '_ {
        self.ids.iter().copied().zip(self.labels.iter().copied())
    }

    fn ids_of(&self, label: Label) -> Vec<u64> {
        self.members().filter(|(_, l)| *l == label).map(|(id, _)| id).collect()
    }

    /// Looks up the selected records, in selection order.
    pub fn resolve<'a>(&self, records: &'a [FlowRecord]) -> Vec<&'a FlowRecord> {
        let by_id: HashMap<u64, &FlowRecord> = records.iter().map(|r| (r.id, r)).collect();
        self.ids.iter().filter_map(|id| by_id.get(id).copied()).collect()
    }
}

/// Draws `n/2` records of each class, ranked by a seeded hash of their IDs.
pub fn sample_balanced(
    records: &[FlowRecord],
    n: usize,
    seed: u64,
) -> Result<SubsetSelection, DatasetError> {
    if n == 0 {
        return Err(DatasetError::ZeroSize);
    }
    if n % 2 != 0 {
        return Err(DatasetError::OddN(n));
    }
    let per_class = n / 2;
    let mut members = Vec::with_capacity(n);
    for label in [Label::Benign, Label::Attack] {
        let mut ids: Vec<u64> = records.iter().filter(|r| r.label == label).map(|r| r.id).collect();
        if ids.len() < per_class {
            return Err(DatasetError::InsufficientClass {
                label,
                available: ids.len(),
                needed: per_class,
            });
        }
        ids.sort_unstable();
        members.extend(
            pick_ranked(&ids, per_class, seed, SALT_BALANCED)
                .into_iter()
                .map(|id| (id, label)),
        );
    }
    Ok(SubsetSelection::from_members(members, seed))
}

/// Splits `subset` into a dev slice of `dev_size` and the remaining test
/// slice. Per-class dev counts follow the subset's class proportions (half
/// each for a balanced subset, odd remainder to the attack class).
pub fn split_dev_test(
    subset: &SubsetSelection,
    dev_size: usize,
    seed: u64,
) -> Result<(SubsetSelection, SubsetSelection), DatasetError> {
    if dev_size == 0 {
        return Err(DatasetError::ZeroDevSize);
    }
    if dev_size >= subset.len() {
        return Err(DatasetError::DevTooLarge {
            dev_size,
            subset_size: subset.len(),
        });
    }
    let quotas = dev_quotas(subset, dev_size);
    let mut dev = Vec::with_capacity(dev_size);
    let mut test = Vec::with_capacity(subset.len() - dev_size);
    for (label, quota) in quotas {
        let ids = subset.ids_of(label);
        let chosen: BTreeSet<u64> = pick_ranked(&ids, quota, seed, SALT_DEV).into_iter().collect();
        for id in ids {
            if chosen.contains(&id) {
                dev.push((id, label));
            } else {
                test.push((id, label));
            }
        }
    }
    Ok((
        SubsetSelection::from_members(dev, seed),
        SubsetSelection::from_members(test, seed),
    ))
}

fn dev_quotas(subset: &SubsetSelection, dev_size: usize) -> [(Label, usize); 2] {
    let total = subset.len();
    let n_att = subset.count(Label::Attack);
    let n_ben = subset.count(Label::Benign);
    // Largest-remainder apportionment; ties go to the attack class.
    let exact_att = dev_size as f64 * n_att as f64 / total as f64;
    let mut att = exact_att.floor() as usize;
    let mut ben = (dev_size as f64 * n_ben as f64 / total as f64).floor() as usize;
    while att + ben < dev_size {
        let rem_att = dev_size as f64 * n_att as f64 / total as f64 - att as f64;
        let rem_ben = dev_size as f64 * n_ben as f64 / total as f64 - ben as f64;
        if (rem_att >= rem_ben && att < n_att) || ben >= n_ben {
            att += 1;
        } else {
            ben += 1;
        }
    }
    [(Label::Benign, ben.min(n_ben)), (Label::Attack, att.min(n_att))]
}

/// Writes the `ids.txt` layout: a `# dev` section then a `# test` section,
/// IDs ascending within each.
pub fn write_ids<W: Write>(
    mut w: W,
    dev: &SubsetSelection,
    test: &SubsetSelection,
) -> std::io::Result<()> {
    for (header, sel) in [("# dev", dev), ("# test", test)] {
        writeln!(w, "{header}")?;
        for id in &sel.ids {
            writeln!(w, "{id}")?;
        }
    }
    Ok(())
}

/// Parses an `ids.txt` file into its named sections.
pub fn read_ids(text: &str) -> Result<BTreeMap<String, Vec<u64>>, DatasetError> {
    let mut sections: BTreeMap<String, Vec<u64>> = BTreeMap::new();
    let mut current: Option<String> = None;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('#') {
            let name = name.trim().to_string();
            sections.entry(name.clone()).or_default();
            current = Some(name);
            continue;
        }
        let bad = || DatasetError::BadIdsFile {
            line: i + 1,
            text: line.to_string(),
        };
        let id = line.parse::<u64>().map_err(|_| bad())?;
        let section = current.as_ref().ok_or_else(bad)?;
        sections.get_mut(section).expect("section exists").push(id);
    }
    Ok(sections)
}
