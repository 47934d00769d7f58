//! Tabular baseline: z-score + one-hot transform and class-weighted L2
//! logistic regression trained by mini-batch gradient descent.

use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{FlowRecord, Label, CATEGORICAL};

const MIN_STD: f64 = 1e-12;

pub type FeatureVector = Vec<f64>;

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("cannot fit on an empty training set")]
    EmptyTrain,
    #[error("record {record_id} lacks numeric feature {feature:?} seen at fit time")]
    MissingFeature { record_id: u64, feature: String },
    #[error("expected feature dimension {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("{x} feature vectors but {y} labels")]
    LengthMismatch { x: usize, y: usize },
    #[error("training labels contain a single class")]
    SingleClass,
    #[error("objective became non-finite; lower the step size")]
    NonFiniteLoss,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub names: Vec<String>,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl Standardizer {
    pub fn z(&self, i: usize, x: f64) -> f64 {
        (x - self.means[i]) / self.stds[i]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryColumn {
    pub column: String,
    pub categories: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OneHotEncoder {
    pub columns: Vec<CategoryColumn>,
}

impl OneHotEncoder {
    pub fn width(&self) -> usize {
        self.columns.iter().map(|c| c.categories.len()).sum()
    }
}

/// The fitted transform, serialized as `preprocessor.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessor {
    pub standardizer: Standardizer,
    pub encoder: OneHotEncoder,
}

impl Preprocessor {
    pub fn dim(&self) -> usize {
        self.standardizer.names.len() + self.encoder.width()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("preprocessor serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, BaselineError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), BaselineError> {
        Ok(std::fs::write(path, self.to_json())?)
    }

    pub fn load(path: &Path) -> Result<Self, BaselineError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Fits μ, σ (population) and first-seen category lists on `train`, then
/// transforms it.
pub fn fit_transform(train: &[FlowRecord]) -> Result<(Preprocessor, Vec<FeatureVector>), BaselineError> {
    let first = train.first().ok_or(BaselineError::EmptyTrain)?;
    let names: Vec<String> = first.numeric_features().iter().map(|(n, _)| n.to_string()).collect();
    let d = names.len();
    let n = train.len() as f64;

    let mut rows = Vec::with_capacity(train.len());
    for r in train {
        rows.push(numeric_row(r, &names)?);
    }
    let mut means = vec![0.0; d];
    for row in &rows {
        for (m, v) in means.iter_mut().zip(row) {
            *m += v;
        }
    }
    means.iter_mut().for_each(|m| *m /= n);
    let mut stds = vec![0.0; d];
    for row in &rows {
        for ((s, v), m) in stds.iter_mut().zip(row).zip(&means) {
            *s += (v - m) * (v - m);
        }
    }
    for s in stds.iter_mut() {
        *s = (*s / n).sqrt();
        if !(*s >= MIN_STD) {
            *s = 1.0;
        }
    }

    let columns = CATEGORICAL
        .iter()
        .map(|&col| {
            let mut categories: Vec<String> = Vec::new();
            for r in train {
                let v = r.categorical(col).expect("known categorical column");
                if !categories.iter().any(|c| c == v) {
                    categories.push(v.to_string());
                }
            }
            CategoryColumn {
                column: col.to_string(),
                categories,
            }
        })
        .collect();

    let pre = Preprocessor {
        standardizer: Standardizer { names, means, stds },
        encoder: OneHotEncoder { columns },
    };
    let vectors = train
        .iter()
        .zip(rows)
        .map(|(r, row)| pre.assemble(r, &row))
        .collect();
    Ok((pre, vectors))
}

fn numeric_row(record: &FlowRecord, names: &[String]) -> Result<Vec<f64>, BaselineError> {
    let feats = record.numeric_features();
    if feats.len() == names.len() && feats.iter().zip(names).all(|((a, _), b)| *a == b.as_str()) {
        return Ok(feats.into_iter().map(|(_, v)| v).collect());
    }
    let lookup: HashMap<&str, f64> = feats.into_iter().collect();
    names
        .iter()
        .map(|name| {
            lookup.get(name.as_str()).copied().ok_or_else(|| BaselineError::MissingFeature {
                record_id: record.id,
                feature: name.clone(),
            })
        })
        .collect()
}

impl Preprocessor {
    fn assemble(&self, record: &FlowRecord, numeric: &[f64]) -> FeatureVector {
        let mut v = Vec::with_capacity(self.dim());
        v.extend(numeric.iter().enumerate().map(|(i, &x)| self.standardizer.z(i, x)));
        for col in &self.encoder.columns {
            let value = record.categorical(&col.column).unwrap_or("");
            v.extend(col.categories.iter().map(|c| if c == value { 1.0 } else { 0.0 }));
        }
        v
    }

    /// Training-time mapping; unseen categories give an all-zero block.
    pub fn transform(&self, records: &[FlowRecord]) -> Result<Vec<FeatureVector>, BaselineError> {
        records
            .iter()
            .map(|r| Ok(self.assemble(r, &numeric_row(r, &self.standardizer.names)?)))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub benign: f64,
    pub attack: f64,
}

impl ClassWeights {
    /// `w_y = n / (2 n_y)`.
    pub fn balanced(y: &[Label]) -> Result<Self, BaselineError> {
        let n = y.len() as f64;
        let pos = y.iter().filter(|l| l.is_attack()).count() as f64;
        let neg = n - pos;
        if pos == 0.0 || neg == 0.0 {
            return Err(BaselineError::SingleClass);
        }
        Ok(ClassWeights {
            benign: n / (2.0 * neg),
            attack: n / (2.0 * pos),
        })
    }

    pub fn get(&self, y: Label) -> f64 {
        match y {
            Label::Benign => self.benign,
            Label::Attack => self.attack,
        }
    }
}

/// Serialized as `logreg.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRegModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub l2: f64,
    pub class_weights: ClassWeights,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogRegConfig {
    pub l2: f64,
    pub epochs: usize,
    pub step: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for LogRegConfig {
    fn default() -> Self {
        LogRegConfig {
            l2: 1e-3,
            epochs: 100,
            step: 0.5,
            batch_size: 64,
            seed: 0,
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn dot(w: &[f64], x: &[f64]) -> f64 {
    w.iter().zip(x).map(|(a, b)| a * b).sum()
}

/// The weighted training objective and its gradient, kept public so the
/// gradient can be checked against finite differences.
pub struct Objective<'a> {
    pub x: &'a [FeatureVector],
    pub y: &'a [Label],
    pub class_weights: ClassWeights,
    pub l2: f64,
}

impl Objective<'_> {
    /// `Σ w_y CE(y, σ(w·x + b)) + λ‖w‖²`.
    pub fn value(&self, w: &[f64], b: f64) -> f64 {
        let data: f64 = self
            .x
            .iter()
            .zip(self.y)
            .map(|(xi, &yi)| {
                let z = dot(w, xi) + b;
                let t = f64::from(yi.bit());
                self.class_weights.get(yi) * (softplus(z) - t * z)
            })
            .sum();
        data + self.l2 * dot(w, w)
    }

    pub fn gradient(&self, w: &[f64], b: f64) -> (Vec<f64>, f64) {
        let mut gw: Vec<f64> = w.iter().map(|wi| 2.0 * self.l2 * wi).collect();
        let mut gb = 0.0;
        for (xi, &yi) in self.x.iter().zip(self.y) {
            let r = self.class_weights.get(yi) * (sigmoid(dot(w, xi) + b) - f64::from(yi.bit()));
            for (g, xv) in gw.iter_mut().zip(xi) {
                *g += r * xv;
            }
            gb += r;
        }
        (gw, gb)
    }
}

/// Mini-batch gradient descent on the mean-scaled objective. The L2 term is
/// applied as an exact shrink so large λ stays stable. After each epoch the
/// full objective is checked; on an increase the epoch is undone and the step
/// halved.
pub fn train_logreg(x: &[FeatureVector], y: &[Label], config: &LogRegConfig) -> Result<LogRegModel, BaselineError> {
    if x.len() != y.len() {
        return Err(BaselineError::LengthMismatch { x: x.len(), y: y.len() });
    }
    if x.is_empty() {
        return Err(BaselineError::EmptyTrain);
    }
    if !(config.l2 >= 0.0 && config.l2.is_finite()) || !(config.step > 0.0 && config.step.is_finite()) || config.batch_size == 0 {
        return Err(BaselineError::InvalidConfig(format!("{config:?}")));
    }
    let d = x[0].len();
    if let Some(bad) = x.iter().find(|v| v.len() != d) {
        return Err(BaselineError::DimensionMismatch { expected: d, got: bad.len() });
    }
    let class_weights = ClassWeights::balanced(y)?;
    let obj = Objective {
        x,
        y,
        class_weights,
        l2: config.l2,
    };
    let n = x.len() as f64;

    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut best = obj.value(&w, b);
    let mut step = config.step;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..x.len()).collect();

    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let (w0, b0) = (w.clone(), b);
        for batch in order.chunks(config.batch_size) {
            let m = batch.len() as f64;
            let mut gw = vec![0.0; d];
            let mut gb = 0.0;
            for &i in batch {
                let r = class_weights.get(y[i]) * (sigmoid(dot(&w, &x[i]) + b) - f64::from(y[i].bit()));
                for (g, xv) in gw.iter_mut().zip(&x[i]) {
                    *g += r * xv;
                }
                gb += r;
            }
            for (wi, g) in w.iter_mut().zip(&gw) {
                *wi -= step * g / m;
            }
            b -= step * gb / m;
            let shrink = 1.0 + step * 2.0 * config.l2 / n;
            w.iter_mut().for_each(|wi| *wi /= shrink);
        }
        let value = obj.value(&w, b);
        if !value.is_finite() {
            return Err(BaselineError::NonFiniteLoss);
        }
        if value > best {
            w = w0;
            b = b0;
            step /= 2.0;
        } else {
            best = value;
        }
    }
    Ok(LogRegModel {
        weights: w,
        bias: b,
        l2: config.l2,
        class_weights,
    })
}

impl LogRegModel {
    pub fn predict_proba(&self, x: &[FeatureVector]) -> Result<Vec<f64>, BaselineError> {
        x.iter()
            .map(|xi| {
                if xi.len() != self.weights.len() {
                    return Err(BaselineError::DimensionMismatch {
                        expected: self.weights.len(),
                        got: xi.len(),
                    });
                }
                Ok(sigmoid(dot(&self.weights, xi) + self.bias))
            })
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, BaselineError> {
        Ok(serde_json::from_str(text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{ExtraNumeric, UNSW_EXTRA_NUMERIC};
    use proptest::prelude::*;
    use rand::Rng;
    use std::sync::Arc;

    fn record(id: u64, proto: &str, service: &str, state: &str, dur: f64) -> FlowRecord {
        let names: Arc<[String]> = UNSW_EXTRA_NUMERIC.iter().map(|s| s.to_string()).collect();
        let values = (0..names.len()).map(|i| (id * i as u64) as f64).collect();
        FlowRecord {
            id,
            dur,
            proto: proto.into(),
            service: service.into(),
            state: state.into(),
            spkts: 2,
            dpkts: 2,
            sbytes: 100 + id,
            dbytes: 50,
            sttl: 31,
            dttl: 29,
            tcprtt: 0.0,
            synack: 0.0,
            ackdat: 0.0,
            ct_state_ttl: 1,
            extra_numeric: ExtraNumeric::new(names, values),
            label: if id % 2 == 0 { Label::Attack } else { Label::Benign },
        }
    }

    fn toy_train() -> Vec<FlowRecord> {
        vec![
            record(1, "tcp", "http", "FIN", 3.0),
            record(2, "udp", "dns", "INT", 5.0),
            record(3, "tcp", "-", "FIN", 7.0),
            record(4, "udp", "http", "INT", 5.0),
        ]
    }

    #[test]
    fn dimension_by_construction() {
        let (pre, xs) = fit_transform(&toy_train()).unwrap();
        assert_eq!(pre.dim(), 39 + 2 + 3 + 2);
        assert!(xs.iter().all(|v| v.len() == 46));
        assert_eq!(pre.encoder.columns[1].categories, vec!["http", "dns", "-"]);
    }

    #[test]
    fn standardization_and_guard() {
        let (pre, xs) = fit_transform(&toy_train()).unwrap();
        // dur: mean 5, population std sqrt(2)
        assert_eq!(pre.standardizer.means[0], 5.0);
        assert!((pre.standardizer.stds[0] - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(xs[1][0], 0.0);
        // spkts is constant
        let i = pre.standardizer.names.iter().position(|n| n == "spkts").unwrap();
        assert_eq!(pre.standardizer.stds[i], 1.0);
        assert!(xs.iter().all(|v| v[i] == 0.0));
    }

    #[test]
    fn unknown_category_is_zero_block() {
        let (pre, _) = fit_transform(&toy_train()).unwrap();
        let x = pre.transform(&[record(9, "tcp", "smtp", "FIN", 5.0)]).unwrap();
        let start = 39 + 2;
        assert_eq!(&x[0][start..start + 3], &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn transform_matches_fit_and_survives_serialization() {
        let train = toy_train();
        let (pre, xs) = fit_transform(&train).unwrap();
        assert_eq!(pre.transform(&train).unwrap(), xs);
        let back = Preprocessor::from_json(&pre.to_json()).unwrap();
        assert_eq!(back, pre);
        assert_eq!(back.transform(&train).unwrap(), xs);
    }

    #[test]
    fn missing_feature() {
        let (pre, _) = fit_transform(&toy_train()).unwrap();
        let mut r = record(5, "tcp", "http", "FIN", 1.0);
        r.extra_numeric = ExtraNumeric::empty();
        assert!(matches!(pre.transform(&[r]), Err(BaselineError::MissingFeature { .. })));
        assert!(matches!(fit_transform(&[]), Err(BaselineError::EmptyTrain)));
    }

    #[test]
    fn predict_proba_identities() {
        let m = LogRegModel {
            weights: vec![0.0, 0.0],
            bias: 0.0,
            l2: 0.0,
            class_weights: ClassWeights { benign: 1.0, attack: 1.0 },
        };
        assert_eq!(m.predict_proba(&[vec![3.0, -1.0]]).unwrap(), vec![0.5]);
        let m = LogRegModel { bias: 40.0, ..m };
        assert!((m.predict_proba(&[vec![1.0, 1.0]]).unwrap()[0] - 1.0).abs() <= 1e-15);
        assert!(matches!(m.predict_proba(&[vec![1.0]]), Err(BaselineError::DimensionMismatch { .. })));
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert_eq!(sigmoid(1000.0), 1.0);
        assert!(softplus(1000.0).is_finite());
    }

    pub(crate) fn blobs(n: usize, seed: u64) -> (Vec<FeatureVector>, Vec<Label>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let attack = i % 2 == 0;
                let c = if attack { 2.0 } else { -2.0 };
                let x = vec![c + rng.gen_range(-1.0..1.0), c + rng.gen_range(-1.0..1.0)];
                (x, if attack { Label::Attack } else { Label::Benign })
            })
            .unzip()
    }

    #[test]
    fn separable_blobs() {
        let (x, y) = blobs(200, 3);
        let m = train_logreg(&x, &y, &LogRegConfig::default()).unwrap();
        let p = m.predict_proba(&x).unwrap();
        let correct = p.iter().zip(&y).filter(|(p, y)| (**p >= 0.5) == y.is_attack()).count();
        assert!(correct as f64 / 200.0 >= 0.99);
    }

    #[test]
    fn heavy_l2_shrinks() {
        let (x, y) = blobs(200, 4);
        let cfg = LogRegConfig {
            l2: 1e6,
            ..Default::default()
        };
        let m = train_logreg(&x, &y, &cfg).unwrap();
        assert!(dot(&m.weights, &m.weights).sqrt() < 1e-2);
    }

    #[test]
    fn training_decreases_objective_and_is_deterministic() {
        let (x, y) = blobs(100, 5);
        let cfg = LogRegConfig {
            step: 50.0,
            ..Default::default()
        };
        let a = train_logreg(&x, &y, &cfg).unwrap();
        let b = train_logreg(&x, &y, &cfg).unwrap();
        assert_eq!(a, b);
        let obj = Objective {
            x: &x,
            y: &y,
            class_weights: a.class_weights,
            l2: cfg.l2,
        };
        assert!(obj.value(&a.weights, a.bias) <= obj.value(&[0.0, 0.0], 0.0));
        let single = vec![Label::Attack; x.len()];
        assert!(matches!(train_logreg(&x, &single, &cfg), Err(BaselineError::SingleClass)));
    }

    #[test]
    fn class_weights_balanced() {
        let y = [Label::Attack, Label::Benign, Label::Benign, Label::Benign];
        let cw = ClassWeights::balanced(&y).unwrap();
        assert_eq!(cw.attack, 2.0);
        assert!((cw.benign - 4.0 / 6.0).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn gradient_matches_finite_differences(seed in any::<u64>(), d in 1usize..=10, n in 2usize..=50) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<FeatureVector> = (0..n).map(|_| (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
            let mut y: Vec<Label> = (0..n).map(|_| if rng.gen_bool(0.5) { Label::Attack } else { Label::Benign }).collect();
            y[0] = Label::Attack;
            y[1] = Label::Benign;
            let obj = Objective { x: &x, y: &y, class_weights: ClassWeights::balanced(&y).unwrap(), l2: 0.1 };
            let w: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let b = rng.gen_range(-1.0..1.0);
            let (gw, gb) = obj.gradient(&w, b);
            let h = 1e-6;
            for j in 0..=d {
                let (mut wp, mut wm) = (w.clone(), w.clone());
                let (mut bp, mut bm) = (b, b);
                if j < d { wp[j] += h; wm[j] -= h; } else { bp += h; bm -= h; }
                let fd = (obj.value(&wp, bp) - obj.value(&wm, bm)) / (2.0 * h);
                let an = if j < d { gw[j] } else { gb };
                prop_assert!((fd - an).abs() / an.abs().max(1.0) < 1e-4, "component {}: fd {} vs {}", j, fd, an);
            }
        }
    }
}
