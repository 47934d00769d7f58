//! Derived numeric cues and the six boolean domain flags.
//!
//! Every rule here is a fixed threshold test over one record. Default cutoffs
//! are heuristics and can be overridden through `thresholds.json`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::FlowRecord;

/// Floor applied to `dur` before dividing packet counts by it.
pub const MIN_DURATION: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum FlagError {
    #[error("rarity table needs at least one training record")]
    EmptyTrain,
    #[error("invalid threshold `{field}`: {reason}")]
    InvalidThreshold { field: &'static str, reason: &'static str },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedCues {
    pub dur: f64,
    pub pkt_rate: f64,
    pub byte_ratio: f64,
    pub pkt_ratio: f64,
    pub ttl_ratio: f64,
    pub tcprtt: f64,
    pub synack: f64,
    pub ackdat: f64,
    pub ct_state_ttl: u64,
}

impl DerivedCues {
    /// Cue value by name, for table-driven rendering.
    pub fn get(&self, name: &str) -> Option<f64> {
        Some(match name {
            "dur" => self.dur,
            "pkt_rate" => self.pkt_rate,
            "byte_ratio" => self.byte_ratio,
            "pkt_ratio" => self.pkt_ratio,
            "ttl_ratio" => self.ttl_ratio,
            "tcprtt" => self.tcprtt,
            "synack" => self.synack,
            "ackdat" => self.ackdat,
            "ct_state_ttl" => self.ct_state_ttl as f64,
            _ => return None,
        })
    }
}

pub const CUE_NAMES: [&str; 9] = [
    "dur",
    "pkt_rate",
    "byte_ratio",
    "pkt_ratio",
    "ttl_ratio",
    "tcprtt",
    "synack",
    "ackdat",
    "ct_state_ttl",
];

pub fn compute_cues(record: &FlowRecord) -> DerivedCues {
    let pkts = (record.spkts + record.dpkts) as f64;
    DerivedCues {
        dur: record.dur,
        pkt_rate: pkts / record.dur.max(MIN_DURATION),
        byte_ratio: (record.sbytes as f64 + 1.0) / (record.dbytes as f64 + 1.0),
        pkt_ratio: (record.spkts as f64 + 1.0) / (record.dpkts as f64 + 1.0),
        ttl_ratio: (f64::from(record.sttl) + 1.0) / (f64::from(record.dttl) + 1.0),
        tcprtt: record.tcprtt,
        synack: record.synack,
        ackdat: record.ackdat,
        ct_state_ttl: record.ct_state_ttl,
    }
}

/// Cutoffs for the flag rules. Absent keys in `thresholds.json` keep their
/// defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlagThresholds {
    /// Byte-ratio cutoff.
    pub tau_br: f64,
    /// Packet-ratio cutoff.
    pub tau_pr: f64,
    /// Packet-rate cutoff, packets per second.
    pub tau_r: f64,
    pub ttl_low: f64,
    pub ttl_high: f64,
    /// Handshake RTT below this (but non-zero) is implausible, seconds.
    pub timer_min: f64,
    pub timer_order_slack: f64,
    pub rarity_quantile: f64,
    pub burst_dur_max: f64,
    pub burst_pkts_min: u64,
}

impl Default for FlagThresholds {
    fn default() -> Self {
        FlagThresholds {
            tau_br: 100.0,
            tau_pr: 10.0,
            tau_r: 1000.0,
            ttl_low: 30.0,
            ttl_high: 255.0,
            timer_min: 1e-4,
            timer_order_slack: 1e-3,
            rarity_quantile: 0.05,
            burst_dur_max: 0.1,
            burst_pkts_min: 20,
        }
    }
}

impl FlagThresholds {
    pub fn validate(&self) -> Result<(), FlagError> {
        let positive = [
            ("tau_br", self.tau_br),
            ("tau_pr", self.tau_pr),
            ("tau_r", self.tau_r),
            ("ttl_low", self.ttl_low),
            ("ttl_high", self.ttl_high),
            ("timer_min", self.timer_min),
            ("timer_order_slack", self.timer_order_slack),
            ("burst_dur_max", self.burst_dur_max),
        ];
        for (field, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(FlagError::InvalidThreshold {
                    field,
                    reason: "must be finite and strictly positive",
                });
            }
        }
        if self.burst_pkts_min == 0 {
            return Err(FlagError::InvalidThreshold {
                field: "burst_pkts_min",
                reason: "must be strictly positive",
            });
        }
        if self.ttl_low >= self.ttl_high {
            return Err(FlagError::InvalidThreshold {
                field: "ttl_low",
                reason: "must be below ttl_high",
            });
        }
        if !(self.rarity_quantile > 0.0 && self.rarity_quantile < 1.0) {
            return Err(FlagError::InvalidThreshold {
                field: "rarity_quantile",
                reason: "must lie in (0, 1)",
            });
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, FlagError> {
        let t: FlagThresholds = serde_json::from_str(text)?;
        t.validate()?;
        Ok(t)
    }

    pub fn load(path: &Path) -> Result<Self, FlagError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Empirical category frequencies of `service` and `state` on the training
/// file, plus the cutoff below which a category counts as rare.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RarityTable {
    pub service_freq: BTreeMap<String, f64>,
    pub state_freq: BTreeMap<String, f64>,
    pub cutoff_freq: f64,
}

impl RarityTable {
    /// Unknown categories are rare.
    pub fn is_rare(&self, service: &str, state: &str) -> bool {
        let below = |m: &BTreeMap<String, f64>, k: &str| {
            m.get(k).map_or(true, |&f| f < self.cutoff_freq)
        };
        below(&self.service_freq, service) || below(&self.state_freq, state)
    }

    pub fn load(path: &Path) -> Result<Self, FlagError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("rarity table serializes")
    }
}

/// Fits category frequencies. The cutoff is the `rarity_quantile` quantile
/// (linear interpolation) of the pooled per-category frequencies of both
/// columns.
pub fn fit_rarity_table<'a, I>(train: I, thresholds: &FlagThresholds) -> Result<RarityTable, FlagError>
where
    I: IntoIterator<Item = &'a FlowRecord>,
{
    let mut services: BTreeMap<String, usize> = BTreeMap::new();
    let mut states: BTreeMap<String, usize> = BTreeMap::new();
    let mut n = 0usize;
    for r in train {
        *services.entry(r.service.clone()).or_default() += 1;
        *states.entry(r.state.clone()).or_default() += 1;
        n += 1;
    }
    if n == 0 {
        return Err(FlagError::EmptyTrain);
    }
    let normalize = |m: BTreeMap<String, usize>| -> BTreeMap<String, f64> {
        m.into_iter().map(|(k, c)| (k, c as f64 / n as f64)).collect()
    };
    let service_freq = normalize(services);
    let state_freq = normalize(states);
    let mut pooled: Vec<f64> = service_freq.values().chain(state_freq.values()).copied().collect();
    pooled.sort_by(f64::total_cmp);
    let cutoff_freq = quantile_sorted(&pooled, thresholds.rarity_quantile);
    Ok(RarityTable {
        service_freq,
        state_freq,
        cutoff_freq,
    })
}

fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct FlagSet {
    pub asymmetry_high: bool,
    pub pkt_rate_high: bool,
    pub ttl_anomaly: bool,
    pub tcp_timer_anomaly: bool,
    pub rare_service_state: bool,
    pub short_burst: bool,
}

pub const FLAG_NAMES: [&str; 6] = [
    "asymmetry_high",
    "pkt_rate_high",
    "ttl_anomaly",
    "tcp_timer_anomaly",
    "rare_service_state",
    "short_burst",
];

impl FlagSet {
    /// Flags in their fixed rendering order.
    pub fn as_array(&self) -> [bool; 6] {
        [
            self.asymmetry_high,
            self.pkt_rate_high,
            self.ttl_anomaly,
            self.tcp_timer_anomaly,
            self.rare_service_state,
            self.short_burst,
        ]
    }

    pub fn from_array(a: [bool; 6]) -> Self {
        FlagSet {
            asymmetry_high: a[0],
            pkt_rate_high: a[1],
            ttl_anomaly: a[2],
            tcp_timer_anomaly: a[3],
            rare_service_state: a[4],
            short_burst: a[5],
        }
    }

    pub fn named(&self) -> impl Iterator<Item = (&'static str, bool)> {
        FLAG_NAMES.into_iter().zip(self.as_array())
    }

    pub fn count(&self) -> usize {
        self.as_array().iter().filter(|&&b| b).count()
    }
}

pub fn compute_flags(
    cues: &DerivedCues,
    record: &FlowRecord,
    thresholds: &FlagThresholds,
    rarity: &RarityTable,
) -> FlagSet {
    let t = thresholds;
    let in_band = |ttl: u8| {
        let v = f64::from(ttl);
        v >= t.ttl_low && v <= t.ttl_high
    };
    let timers_set = cues.tcprtt > 0.0 && cues.synack > 0.0 && cues.ackdat > 0.0;
    let pkts = record.spkts + record.dpkts;
    FlagSet {
        asymmetry_high: cues.byte_ratio > t.tau_br || cues.pkt_ratio > t.tau_pr,
        pkt_rate_high: cues.pkt_rate > t.tau_r,
        // A zero return TTL means there was no return traffic.
        ttl_anomaly: !in_band(record.sttl) || (record.dttl > 0 && !in_band(record.dttl)),
        tcp_timer_anomaly: (cues.tcprtt > 0.0 && cues.tcprtt < t.timer_min)
            || (timers_set && cues.synack + cues.ackdat > cues.tcprtt + t.timer_order_slack),
        rare_service_state: rarity.is_rare(&record.service, &record.state),
        short_burst: cues.dur <= t.burst_dur_max && pkts >= t.burst_pkts_min,
    }
}

/// Cues and flags for one record in a single call.
pub fn flags_for(record: &FlowRecord, thresholds: &FlagThresholds, rarity: &RarityTable) -> (DerivedCues, FlagSet) {
    let cues = compute_cues(record);
    let flags = compute_flags(&cues, record, thresholds, rarity);
    (cues, flags)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{ExtraNumeric, Label};
    use proptest::prelude::*;

    fn zero_record() -> FlowRecord {
        FlowRecord {
            id: 1,
            dur: 0.0,
            proto: "tcp".into(),
            service: "http".into(),
            state: "FIN".into(),
            spkts: 0,
            dpkts: 0,
            sbytes: 0,
            dbytes: 0,
            sttl: 0,
            dttl: 0,
            tcprtt: 0.0,
            synack: 0.0,
            ackdat: 0.0,
            ct_state_ttl: 0,
            extra_numeric: ExtraNumeric::empty(),
            label: Label::Benign,
        }
    }

    fn table(services: &[(&str, usize)], states: &[(&str, usize)]) -> RarityTable {
        let mut recs = Vec::new();
        let mut id = 0;
        let total: usize = services.iter().map(|s| s.1).sum();
        assert_eq!(total, states.iter().map(|s| s.1).sum::<usize>());
        let svc: Vec<&str> = services.iter().flat_map(|(s, c)| std::iter::repeat(*s).take(*c)).collect();
        let st: Vec<&str> = states.iter().flat_map(|(s, c)| std::iter::repeat(*s).take(*c)).collect();
        for (s, t) in svc.iter().zip(&st) {
            id += 1;
            let mut r = zero_record();
            r.id = id;
            r.service = s.to_string();
            r.state = t.to_string();
            recs.push(r);
        }
        fit_rarity_table(&recs, &FlagThresholds { rarity_quantile: 0.25, ..Default::default() }).unwrap()
    }

    #[test]
    fn cue_formulas() {
        let mut r = zero_record();
        r.spkts = 100;
        r.dpkts = 100;
        r.dur = 0.01;
        assert_eq!(compute_cues(&r).pkt_rate, 20000.0);

        let r = zero_record();
        assert_eq!(compute_cues(&r).byte_ratio, 1.0);

        let mut r = zero_record();
        r.spkts = 5;
        let c = compute_cues(&r);
        assert!((c.pkt_rate - 5_000_000.0).abs() < 1e-6);
    }

    #[test]
    fn asymmetry_rule() {
        let mut r = zero_record();
        r.sbytes = 10_000;
        r.dbytes = 50;
        let rarity = table(&[("http", 1)], &[("FIN", 1)]);
        let t = FlagThresholds::default();
        let c = compute_cues(&r);
        assert!((c.byte_ratio - 10_001.0 / 51.0).abs() < 1e-12);
        assert!((c.byte_ratio - 196.1).abs() < 0.01);
        assert!(compute_flags(&c, &r, &t, &rarity).asymmetry_high);
    }

    #[test]
    fn zero_record_defaults() {
        let r = zero_record();
        let rarity = table(&[("http", 1)], &[("FIN", 1)]);
        let f = compute_flags(&compute_cues(&r), &r, &FlagThresholds::default(), &rarity);
        assert!(!f.pkt_rate_high);
        assert!(!f.asymmetry_high);
        assert!(!f.short_burst);
        assert!(!f.rare_service_state);
    }

    #[test]
    fn unknown_service_is_rare() {
        let mut r = zero_record();
        r.service = "smtp".into();
        let rarity = table(&[("http", 1)], &[("FIN", 1)]);
        let f = compute_flags(&compute_cues(&r), &r, &FlagThresholds::default(), &rarity);
        assert!(f.rare_service_state);
    }

    #[test]
    fn rarity_fit_by_hand() {
        // Pooled frequencies {0.1, 0.9, 1.0}; the 0.25 quantile is
        // 0.1 + 0.5 * (0.9 - 0.1) = 0.5.
        let t = table(&[("http", 90), ("dns", 10)], &[("FIN", 100)]);
        assert!((t.cutoff_freq - 0.5).abs() < 1e-12);
        assert!(t.is_rare("dns", "FIN"));
        assert!(!t.is_rare("http", "FIN"));
        let sum: f64 = t.service_freq.values().sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn single_category_never_rare() {
        let t = table(&[("http", 7)], &[("FIN", 7)]);
        assert!(!t.is_rare("http", "FIN"));
    }

    #[test]
    fn empty_train() {
        let none: Vec<FlowRecord> = Vec::new();
        assert!(matches!(
            fit_rarity_table(&none, &FlagThresholds::default()),
            Err(FlagError::EmptyTrain)
        ));
    }

    #[test]
    fn ttl_rules() {
        let rarity = table(&[("http", 1)], &[("FIN", 1)]);
        let t = FlagThresholds::default();
        let mut r = zero_record();
        r.sttl = 62;
        r.dttl = 0;
        assert!(!compute_flags(&compute_cues(&r), &r, &t, &rarity).ttl_anomaly);
        r.dttl = 5;
        assert!(compute_flags(&compute_cues(&r), &r, &t, &rarity).ttl_anomaly);
        r.sttl = 10;
        r.dttl = 0;
        assert!(compute_flags(&compute_cues(&r), &r, &t, &rarity).ttl_anomaly);
    }

    #[test]
    fn timer_rules() {
        let rarity = table(&[("http", 1)], &[("FIN", 1)]);
        let t = FlagThresholds::default();
        let mut r = zero_record();
        r.tcprtt = 5e-5;
        assert!(compute_flags(&compute_cues(&r), &r, &t, &rarity).tcp_timer_anomaly);
        r.tcprtt = 0.1;
        r.synack = 0.06;
        r.ackdat = 0.04;
        assert!(!compute_flags(&compute_cues(&r), &r, &t, &rarity).tcp_timer_anomaly);
        r.synack = 0.08;
        assert!(compute_flags(&compute_cues(&r), &r, &t, &rarity).tcp_timer_anomaly);
    }

    #[test]
    fn thresholds_json_defaults_and_validation() {
        let t = FlagThresholds::from_json(r#"{"tau_br": 50}"#).unwrap();
        assert_eq!(t.tau_br, 50.0);
        assert_eq!(t.tau_pr, 10.0);
        assert!(FlagThresholds::from_json(r#"{"ttl_low": 300}"#).is_err());
        assert!(FlagThresholds::from_json(r#"{"rarity_quantile": 1.0}"#).is_err());
        assert!(FlagThresholds::from_json(r#"{"tau_bogus": 1.0}"#).is_err());
    }

    fn arb_record() -> impl Strategy<Value = FlowRecord> {
        (
            0.0f64..10.0,
            0u64..500,
            0u64..500,
            0u64..1_000_000,
            0u64..1_000_000,
            any::<u8>(),
            any::<u8>(),
            0.0f64..0.5,
            0.0f64..0.5,
            0.0f64..0.5,
        )
            .prop_map(|(dur, spkts, dpkts, sbytes, dbytes, sttl, dttl, tcprtt, synack, ackdat)| {
                FlowRecord {
                    dur,
                    spkts,
                    dpkts,
                    sbytes,
                    dbytes,
                    sttl,
                    dttl,
                    tcprtt,
                    synack,
                    ackdat,
                    ..zero_record()
                }
            })
    }

    proptest! {
        #[test]
        fn cue_invariants(r in arb_record()) {
            let c = compute_cues(&r);
            prop_assert!(c.pkt_rate.is_finite() && c.pkt_rate >= 0.0);
            prop_assert!(c.byte_ratio.is_finite() && c.byte_ratio > 0.0);
            prop_assert!(c.pkt_ratio.is_finite() && c.pkt_ratio > 0.0);
            prop_assert!(c.ttl_ratio.is_finite());
        }

        #[test]
        fn asymmetry_monotone_in_sbytes(r in arb_record(), extra in 0u64..1_000_000) {
            let rarity = table(&[("http", 1)], &[("FIN", 1)]);
            let t = FlagThresholds::default();
            let before = compute_flags(&compute_cues(&r), &r, &t, &rarity);
            let mut r2 = r.clone();
            r2.sbytes += extra;
            let after = compute_flags(&compute_cues(&r2), &r2, &t, &rarity);
            prop_assert!(!before.asymmetry_high || after.asymmetry_high);
        }

        #[test]
        fn rate_flags_non_increasing_in_dur(r in arb_record(), extra in 0.0f64..5.0) {
            let rarity = table(&[("http", 1)], &[("FIN", 1)]);
            let t = FlagThresholds::default();
            let before = compute_flags(&compute_cues(&r), &r, &t, &rarity);
            let mut r2 = r.clone();
            r2.dur += extra;
            let after = compute_flags(&compute_cues(&r2), &r2, &t, &rarity);
            prop_assert!(compute_cues(&r2).pkt_rate <= compute_cues(&r).pkt_rate);
            prop_assert!(before.pkt_rate_high || !after.pkt_rate_high);
            prop_assert!(before.short_burst || !after.short_burst);
        }

        #[test]
        fn flags_pure(r in arb_record()) {
            let rarity = table(&[("http", 1)], &[("FIN", 1)]);
            let t = FlagThresholds::default();
            let a = flags_for(&r, &t, &rarity);
            let b = flags_for(&r.clone(), &t, &rarity);
            prop_assert_eq!(a.1, b.1);
            prop_assert_eq!(a.1, compute_flags(&compute_cues(&r), &r, &t, &rarity));
            prop_assert!(a.1.count() <= 6);
        }
    }
}
