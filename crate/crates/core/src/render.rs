//! Flow-to-text rendering.
//!
//! Layout: the flag prefix first, then `proto=… service=… state=…`, then the
//! rounded cues in policy order, all on one line with single spaces.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::FlowRecord;
use crate::flags::{self, DerivedCues, FlagSet, FlagThresholds, RarityTable, CUE_NAMES};

#[derive(Debug, Error, PartialEq)]
pub enum RenderError {
    #[error("rendered flow text is {len} chars, budget is {max}")]
    BudgetExceeded { len: usize, max: usize },
    #[error("invalid render policy: {0}")]
    InvalidPolicy(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderPolicy {
    pub decimals: BTreeMap<String, usize>,
    pub field_order: Vec<String>,
    /// Must contain `{flags}`, which expands to the space-separated
    /// `name=bool` pairs.
    pub flag_prefix_format: String,
    pub max_chars: usize,
}

impl Default for RenderPolicy {
    fn default() -> Self {
        let decimals = [
            ("dur", 3),
            ("pkt_rate", 1),
            ("byte_ratio", 2),
            ("pkt_ratio", 2),
            ("ttl_ratio", 2),
            ("tcprtt", 4),
            ("synack", 4),
            ("ackdat", 4),
            ("ct_state_ttl", 0),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        RenderPolicy {
            decimals,
            field_order: CUE_NAMES.iter().map(|s| s.to_string()).collect(),
            flag_prefix_format: "FLAGS: {flags}".to_string(),
            max_chars: 512,
        }
    }
}

impl RenderPolicy {
    pub fn validate(&self) -> Result<(), RenderError> {
        if self.max_chars == 0 {
            return Err(RenderError::InvalidPolicy("max_chars must be positive".into()));
        }
        if !self.flag_prefix_format.contains("{flags}") {
            return Err(RenderError::InvalidPolicy("flag_prefix_format lacks {flags}".into()));
        }
        if self.flag_prefix_format.contains(['\n', '\r']) {
            return Err(RenderError::InvalidPolicy("flag_prefix_format contains a newline".into()));
        }
        for name in &self.field_order {
            if !CUE_NAMES.contains(&name.as_str()) {
                return Err(RenderError::InvalidPolicy(format!("unknown cue `{name}`")));
            }
            if !self.decimals.contains_key(name) {
                return Err(RenderError::InvalidPolicy(format!("no decimals entry for `{name}`")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowText {
    pub text: String,
    pub record_id: u64,
    pub char_count: usize,
}

/// Fixed-point formatting that rounds the exact binary value half-to-even.
pub fn format_fixed(value: f64, decimals: usize) -> String {
    let s = format!("{value:.decimals$}");
    // Normalize "-0.000" so sign never depends on rounding.
    if s.starts_with('-') && s[1..].chars().all(|c| c == '0' || c == '.') {
        s[1..].to_string()
    } else {
        s
    }
}

pub fn render_flow_text(
    record: &FlowRecord,
    cues: &DerivedCues,
    flags: &FlagSet,
    policy: &RenderPolicy,
) -> Result<FlowText, RenderError> {
    let pairs: Vec<String> = flags.named().map(|(n, b)| format!("{n}={b}")).collect();
    let mut parts = vec![policy.flag_prefix_format.replace("{flags}", &pairs.join(" "))];
    parts.push(format!("proto={}", record.proto));
    parts.push(format!("service={}", record.service));
    parts.push(format!("state={}", record.state));
    for name in &policy.field_order {
        let value = cues
            .get(name)
            .ok_or_else(|| RenderError::InvalidPolicy(format!("unknown cue `{name}`")))?;
        let decimals = *policy
            .decimals
            .get(name)
            .ok_or_else(|| RenderError::InvalidPolicy(format!("no decimals entry for `{name}`")))?;
        parts.push(format!("{name}={}", format_fixed(value, decimals)));
    }
    let text = parts.join(" ").trim_end().to_string();
    let char_count = text.chars().count();
    if char_count > policy.max_chars {
        return Err(RenderError::BudgetExceeded {
            len: char_count,
            max: policy.max_chars,
        });
    }
    Ok(FlowText {
        text,
        record_id: record.id,
        char_count,
    })
}

/// Everything needed to go from a record to its flow text.
#[derive(Debug, Clone)]
pub struct FlowRenderer {
    pub thresholds: FlagThresholds,
    pub rarity: RarityTable,
    pub policy: RenderPolicy,
}

impl FlowRenderer {
    pub fn new(thresholds: FlagThresholds, rarity: RarityTable, policy: RenderPolicy) -> Self {
        FlowRenderer {
            thresholds,
            rarity,
            policy,
        }
    }

    pub fn render(&self, record: &FlowRecord) -> Result<(FlowText, FlagSet), RenderError> {
        let (cues, flags) = flags::flags_for(record, &self.thresholds, &self.rarity);
        let text = render_flow_text(record, &cues, &flags, &self.policy)?;
        Ok((text, flags))
    }
}
