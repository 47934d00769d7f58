//! Prompt assembly for the zero-shot, instruction-guided and few-shot modes.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{FlowRecord, Label};
use crate::grammar::{canonical_json, Prediction, Probability};
use crate::render::{FlowRenderer, FlowText, RenderError};
use crate::seeding::{pick_ranked, SALT_EXEMPLAR};

/// The shipped template, bundled verbatim with every run.
pub const DEFAULT_TEMPLATE_JSON: &str = include_str!("../assets/template_v1.json");

pub const EXAMPLE_HEADER: &str = "### EXAMPLE";
pub const FLOW_HEADER: &str = "### FLOW";
pub const ANSWER_HEADER: &str = "### ANSWER";

/// Confidence shown in exemplar answers.
pub const EXEMPLAR_P_ATTACK: f64 = 0.9;
pub const EXEMPLAR_P_BENIGN: f64 = 0.1;

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("exemplar mismatch: {0}")]
    ExemplarMismatch(String),
    #[error("class {label} has {available} dev records, {needed} needed")]
    InsufficientClass {
        label: Label,
        available: usize,
        needed: usize,
    },
    #[error("invalid prompt mode: {0}")]
    InvalidMode(String),
    #[error("invalid template: {0}")]
    InvalidTemplate(String),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error("template json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum PromptMode {
    ZeroShot,
    Instruction,
    FewShot { k_per_class: usize },
}

impl PromptMode {
    pub fn validate(&self) -> Result<(), PromptError> {
        match self {
            PromptMode::FewShot { k_per_class } if !(1..=2).contains(k_per_class) => Err(
                PromptError::InvalidMode(format!("few_shot needs k_per_class in 1..=2, got {k_per_class}")),
            ),
            _ => Ok(()),
        }
    }

    pub fn exemplars_needed(&self) -> usize {
        match self {
            PromptMode::FewShot { k_per_class } => 2 * k_per_class,
            _ => 0,
        }
    }
}

impl fmt::Display for PromptMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PromptMode::ZeroShot => write!(f, "zero_shot"),
            PromptMode::Instruction => write!(f, "instruction"),
            PromptMode::FewShot { k_per_class } => write!(f, "few_shot:{k_per_class}"),
        }
    }
}

impl FromStr for PromptMode {
    type Err = PromptError;

    /// `zero_shot`, `instruction`, `few_shot` (k=1) or `few_shot:K`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mode = match s.split_once(':') {
            None if s == "zero_shot" => PromptMode::ZeroShot,
            None if s == "instruction" => PromptMode::Instruction,
            None if s == "few_shot" => PromptMode::FewShot { k_per_class: 1 },
            Some(("few_shot", k)) => PromptMode::FewShot {
                k_per_class: k.parse().map_err(|_| PromptError::InvalidMode(s.to_string()))?,
            },
            _ => return Err(PromptError::InvalidMode(s.to_string())),
        };
        mode.validate()?;
        Ok(mode)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    #[serde(default)]
    pub version: String,
    pub role_preamble: String,
    pub instruction_block: String,
    pub answer_directive: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        PromptTemplate::from_json(DEFAULT_TEMPLATE_JSON).expect("bundled template is valid")
    }
}

impl PromptTemplate {
    pub fn from_json(text: &str) -> Result<Self, PromptError> {
        let t: PromptTemplate = serde_json::from_str(text)?;
        t.validate()?;
        Ok(t)
    }

    /// The answer directive must ask for the single JSON object with both
    /// keys; section headers may not appear inside template text.
    pub fn validate(&self) -> Result<(), PromptError> {
        let d = &self.answer_directive;
        if !(d.contains("JSON object") && d.contains("\"prediction\"") && d.contains("\"p_attack\"")) {
            return Err(PromptError::InvalidTemplate(
                "answer_directive must request one JSON object with prediction and p_attack".into(),
            ));
        }
        for part in [&self.role_preamble, &self.instruction_block, &self.answer_directive] {
            if part.contains("###") {
                return Err(PromptError::InvalidTemplate("template text may not contain `###`".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exemplar {
    pub flow_text: FlowText,
    pub label: Label,
    pub verdict_json: String,
}

impl Exemplar {
    pub fn record_id(&self) -> u64 {
        self.flow_text.record_id
    }
}

/// Assembles one prompt. The target flow always comes last, right before
/// the answer section.
pub fn build_prompt(
    mode: PromptMode,
    flow: &FlowText,
    template: &PromptTemplate,
    exemplars: &[Exemplar],
) -> Result<String, PromptError> {
    mode.validate()?;
    let needed = mode.exemplars_needed();
    if exemplars.len() != needed {
        return Err(PromptError::ExemplarMismatch(format!(
            "mode {mode} takes {needed} exemplars, got {}",
            exemplars.len()
        )));
    }
    let attacks = exemplars.iter().filter(|e| e.label.is_attack()).count();
    if attacks * 2 != exemplars.len() {
        return Err(PromptError::ExemplarMismatch(format!(
            "{attacks} attack exemplars out of {}",
            exemplars.len()
        )));
    }

    let mut out = String::new();
    out.push_str(template.role_preamble.trim_end());
    out.push_str("\n\n");
    if mode != PromptMode::ZeroShot {
        out.push_str(template.instruction_block.trim_end());
        out.push_str("\n\n");
    }
    for e in exemplars {
        out.push_str(EXAMPLE_HEADER);
        out.push('\n');
        out.push_str(&e.flow_text.text);
        out.push('\n');
        out.push_str(&e.verdict_json);
        out.push_str("\n\n");
    }
    out.push_str(FLOW_HEADER);
    out.push('\n');
    out.push_str(&flow.text);
    out.push_str("\n\n");
    out.push_str(ANSWER_HEADER);
    out.push('\n');
    out.push_str(template.answer_directive.trim_end());
    out.push('\n');
    Ok(out)
}

/// Picks `k_per_class` exemplars per class from the dev slice, ranked by a
/// seeded hash of their IDs. Output alternates attack, benign.
pub fn select_exemplars(
    dev: &[&FlowRecord],
    k_per_class: usize,
    seed: u64,
    renderer: &FlowRenderer,
) -> Result<Vec<Exemplar>, PromptError> {
    let mut picked: Vec<Vec<&FlowRecord>> = Vec::with_capacity(2);
    for label in [Label::Attack, Label::Benign] {
        let mut ids: Vec<u64> = dev.iter().filter(|r| r.label == label).map(|r| r.id).collect();
        if ids.len() < k_per_class {
            return Err(PromptError::InsufficientClass {
                label,
                available: ids.len(),
                needed: k_per_class,
            });
        }
        ids.sort_unstable();
        let chosen = pick_ranked(&ids, k_per_class, seed, SALT_EXEMPLAR);
        picked.push(
            chosen
                .iter()
                .map(|id| *dev.iter().find(|r| r.id == *id).expect("id from dev"))
                .collect(),
        );
    }
    let mut out = Vec::with_capacity(2 * k_per_class);
    for i in 0..k_per_class {
        for (class, p) in [(&picked[0], EXEMPLAR_P_ATTACK), (&picked[1], EXEMPLAR_P_BENIGN)] {
            let record = class[i];
            let (flow_text, _) = renderer.render(record)?;
            let prediction = if record.label.is_attack() {
                Prediction::Attack
            } else {
                Prediction::Benign
            };
            out.push(Exemplar {
                flow_text,
                label: record.label,
                verdict_json: canonical_json(prediction, Probability::from_f64(p)),
            });
        }
    }
    Ok(out)
}
