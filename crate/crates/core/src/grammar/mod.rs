//! The verdict grammar and the parser that turns raw model output into a
//! [`ModelVerdict`].
//!
//! Two independent routes decide whether an output is valid: [`parse_verdict`]
//! is a hand-written scanner for the one accepted shape, and [`accepts`] runs
//! the generic GBNF matcher over the grammar text. Tests hold the two to
//! exact agreement.

pub mod gbnf;

use std::fmt;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use gbnf::{Grammar, GbnfError};

pub const GRAMMAR_VERSION: &str = "verdict-v1";

pub const VERDICT_GBNF: &str = r#"root   ::= obj nl?
obj    ::= "{\"prediction\":\"" pred "\",\"p_attack\":" prob "}"
pred   ::= "attack" | "benign"
prob   ::= "0" frac? | "1" ("." "0"{1,4})?
frac   ::= "." [0-9]{1,4}
nl     ::= "\n"
"#;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GrammarSpec {
    pub gbnf_text: String,
    pub version: String,
}

pub fn emit_gbnf() -> GrammarSpec {
    GrammarSpec {
        gbnf_text: VERDICT_GBNF.to_string(),
        version: GRAMMAR_VERSION.to_string(),
    }
}

impl GrammarSpec {
    pub fn compile(&self) -> Result<Grammar, GbnfError> {
        Grammar::parse(&self.gbnf_text)
    }
}

fn verdict_grammar() -> &'static Grammar {
    static COMPILED: OnceLock<Grammar> = OnceLock::new();
    COMPILED.get_or_init(|| Grammar::parse(VERDICT_GBNF).expect("built-in grammar parses"))
}

/// True iff `candidate` derives from the grammar's root rule.
pub fn accepts(grammar: &GrammarSpec, candidate: &str) -> bool {
    if grammar.gbnf_text == VERDICT_GBNF {
        return verdict_grammar().accepts(candidate);
    }
    grammar.compile().map(|g| g.accepts(candidate)).unwrap_or(false)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Prediction {
    Attack,
    Benign,
}

impl Prediction {
    pub fn as_str(self) -> &'static str {
        match self {
            Prediction::Attack => "attack",
            Prediction::Benign => "benign",
        }
    }
}

/// A probability with exactly four decimal places, stored as an integer
/// count of 1e-4 steps so literals compare exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Probability(u16);

impl Probability {
    pub const SCALE: u16 = 10_000;
    pub const ZERO: Probability = Probability(0);
    pub const ONE: Probability = Probability(Self::SCALE);

    pub fn from_ten_thousandths(v: u16) -> Option<Self> {
        (v <= Self::SCALE).then_some(Probability(v))
    }

    /// Rounds half-to-even onto the four-decimal grid; values outside [0, 1]
    /// are clamped.
    pub fn from_f64(p: f64) -> Self {
        let scaled = (p.clamp(0.0, 1.0) * f64::from(Self::SCALE)).round_ties_even();
        Probability(scaled as u16)
    }

    pub fn ten_thousandths(self) -> u16 {
        self.0
    }

    pub fn as_f64(self) -> f64 {
        f64::from(self.0) / f64::from(Self::SCALE)
    }
}

impl fmt::Display for Probability {
    /// Canonical literal: `0`, `1`, or `0.` followed by up to four digits
    /// without trailing zeros.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            0 => write!(f, "0"),
            Self::SCALE => write!(f, "1"),
            v => {
                let digits = format!("{v:04}");
                write!(f, "0.{}", digits.trim_end_matches('0'))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelVerdict {
    pub prediction: Prediction,
    pub p_attack: Probability,
    pub raw: String,
}

impl Serialize for Probability {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(self.as_f64())
    }
}

impl<'de> Deserialize<'de> for Probability {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = f64::deserialize(d)?;
        if !(0.0..=1.0).contains(&v) {
            return Err(serde::de::Error::custom("probability outside [0, 1]"));
        }
        Ok(Probability::from_f64(v))
    }
}

impl ModelVerdict {
    pub fn new(prediction: Prediction, p_attack: Probability) -> Self {
        let raw = canonical_json(prediction, p_attack);
        ModelVerdict {
            prediction,
            p_attack,
            raw,
        }
    }

    pub fn canonical_json(&self) -> String {
        canonical_json(self.prediction, self.p_attack)
    }
}

pub fn canonical_json(prediction: Prediction, p_attack: Probability) -> String {
    format!(
        "{{\"prediction\":\"{}\",\"p_attack\":{}}}",
        prediction.as_str(),
        p_attack
    )
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum VerdictError {
    #[error("text outside the JSON object")]
    ExtraTokens,
    #[error("malformed verdict: {0}")]
    Malformed(&'static str),
    #[error("p_attack literal {0:?} lies outside [0, 1]")]
    OutOfRange(String),
    #[error("missing key `{0}`")]
    MissingKey(&'static str),
}

const PREFIX: &str = "\"prediction\":\"";
const MIDDLE: &str = "\",\"p_attack\":";

/// Parses exactly one grammar-valid verdict object, optionally followed by a
/// single newline.
pub fn parse_verdict(raw: &str) -> Result<ModelVerdict, VerdictError> {
    let body = raw.strip_suffix('\n').unwrap_or(raw);
    if !body.starts_with('{') {
        return Err(if body.contains('{') {
            VerdictError::ExtraTokens
        } else {
            VerdictError::Malformed("expected `{`")
        });
    }
    if body.len() < 2 || !body.ends_with('}') {
        return Err(if body[1..].contains('}') {
            VerdictError::ExtraTokens
        } else {
            VerdictError::Malformed("expected `}`")
        });
    }
    let inner = &body[1..body.len() - 1];

    let Some(rest) = inner.strip_prefix(PREFIX) else {
        return Err(if inner.contains("\"prediction\"") {
            VerdictError::Malformed("`prediction` must be the first key, without whitespace")
        } else {
            VerdictError::MissingKey("prediction")
        });
    };
    let (prediction, rest) = if let Some(r) = rest.strip_prefix("attack") {
        (Prediction::Attack, r)
    } else if let Some(r) = rest.strip_prefix("benign") {
        (Prediction::Benign, r)
    } else {
        return Err(VerdictError::Malformed("prediction must be \"attack\" or \"benign\""));
    };
    let Some(number) = rest.strip_prefix(MIDDLE) else {
        return Err(if rest.contains("\"p_attack\"") {
            VerdictError::Malformed("`p_attack` must directly follow `prediction`")
        } else {
            VerdictError::MissingKey("p_attack")
        });
    };
    let p_attack = parse_probability(number)?;
    Ok(ModelVerdict {
        prediction,
        p_attack,
        raw: raw.to_string(),
    })
}

fn parse_probability(lit: &str) -> Result<Probability, VerdictError> {
    let (int, frac) = match lit.split_once('.') {
        Some((i, f)) => (i, Some(f)),
        None => (lit, None),
    };
    let all_digits = |s: &str| !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit());
    if !all_digits(int) || frac.is_some_and(|f| !all_digits(f)) {
        return Err(VerdictError::Malformed("p_attack must be a plain decimal literal"));
    }
    match (int, frac) {
        ("0", None) => Ok(Probability::ZERO),
        ("1", None) => Ok(Probability::ONE),
        ("0", Some(f)) if f.len() <= 4 => {
            let padded = format!("{f:0<4}");
            Ok(Probability(padded.parse().expect("four digits")))
        }
        ("1", Some(f)) if f.len() <= 4 && f.bytes().all(|b| b == b'0') => Ok(Probability::ONE),
        ("0", Some(_)) | ("1", Some(_)) if frac.is_some_and(|f| f.len() > 4) => {
            Err(VerdictError::Malformed("p_attack allows at most four fractional digits"))
        }
        _ if int.len() > 1 && int.starts_with('0') => Err(VerdictError::Malformed("leading zero")),
        _ => Err(VerdictError::OutOfRange(lit.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn emitted_text_is_stable() {
        assert_eq!(emit_gbnf(), emit_gbnf());
        let text = emit_gbnf().gbnf_text;
        assert!(text.starts_with("root   ::= obj nl?\n"));
        assert!(text.contains("prob   ::= \"0\" frac? | \"1\" (\".\" \"0\"{1,4})?\n"));
        assert!(emit_gbnf().compile().is_ok());
    }

    #[test]
    fn grammar_traces() {
        let g = emit_gbnf();
        assert!(accepts(&g, r#"{"prediction":"benign","p_attack":0.05}"#));
        assert!(accepts(&g, "{\"prediction\":\"attack\",\"p_attack\":1.000}\n"));
        assert!(!accepts(&g, r#"{"p_attack":0.5,"prediction":"attack"}"#));
        assert!(!accepts(&g, r#"{"prediction":"attack","p_attack":1.5}"#));
        assert!(!accepts(&g, r#"{"prediction":"attack","p_attack":0.12345}"#));
        assert!(!accepts(&g, ""));
    }

    #[test]
    fn parse_examples() {
        let v = parse_verdict(r#"{"prediction":"attack","p_attack":0.85}"#).unwrap();
        assert_eq!(v.prediction, Prediction::Attack);
        assert_eq!(v.p_attack.ten_thousandths(), 8500);
        assert_eq!(v.p_attack.as_f64(), 0.85);

        assert_eq!(
            parse_verdict(r#"The flow looks malicious. {"prediction":"attack","p_attack":0.9}"#),
            Err(VerdictError::ExtraTokens)
        );
        assert!(matches!(
            parse_verdict(r#"{"prediction":"attack","p_attack":1.5}"#),
            Err(VerdictError::OutOfRange(_))
        ));
        let v = parse_verdict(r#"{"prediction":"benign","p_attack":0}"#).unwrap();
        assert_eq!(v.prediction, Prediction::Benign);
        assert_eq!(v.p_attack.as_f64(), 0.0);
    }

    #[test]
    fn parse_error_kinds() {
        assert_eq!(parse_verdict("{}"), Err(VerdictError::MissingKey("prediction")));
        assert_eq!(
            parse_verdict(r#"{"prediction":"attack"}"#),
            Err(VerdictError::MissingKey("p_attack"))
        );
        assert!(matches!(
            parse_verdict(r#"{"p_attack":0.5,"prediction":"attack"}"#),
            Err(VerdictError::Malformed(_))
        ));
        assert_eq!(
            parse_verdict("{\"prediction\":\"attack\",\"p_attack\":0.5}\n\n"),
            Err(VerdictError::ExtraTokens)
        );
        assert!(matches!(parse_verdict(""), Err(VerdictError::Malformed(_))));
        assert!(matches!(
            parse_verdict(r#"{"prediction":"attack","p_attack":00}"#),
            Err(VerdictError::Malformed(_))
        ));
    }

    #[test]
    fn probability_literals() {
        assert_eq!(Probability::from_f64(0.0474).to_string(), "0.0474");
        assert_eq!(Probability::from_f64(0.5).to_string(), "0.5");
        assert_eq!(Probability::ONE.to_string(), "1");
        assert_eq!(Probability::ZERO.to_string(), "0");
        assert_eq!(Probability::from_f64(0.00005).to_string(), "0");
    }

    proptest! {
        #[test]
        fn canonical_roundtrip(bp in 0u16..=10_000, attack in any::<bool>()) {
            let pred = if attack { Prediction::Attack } else { Prediction::Benign };
            let v = ModelVerdict::new(pred, Probability::from_ten_thousandths(bp).unwrap());
            let back = parse_verdict(&v.canonical_json()).unwrap();
            prop_assert_eq!(back.prediction, v.prediction);
            prop_assert_eq!(back.p_attack, v.p_attack);
            prop_assert!(accepts(&emit_gbnf(), &v.raw));
        }

        #[test]
        fn parser_agrees_with_grammar(s in "[{}\"a-z_:,.0-9\n ]{0,48}") {
            prop_assert_eq!(parse_verdict(&s).is_ok(), accepts(&emit_gbnf(), &s));
        }

        #[test]
        fn valid_outputs_are_printable_ascii(bp in 0u16..=10_000) {
            let v = ModelVerdict::new(Prediction::Benign, Probability::from_ten_thousandths(bp).unwrap());
            prop_assert!(v.raw.chars().all(|c| c == '\n' || (' '..='~').contains(&c)));
        }
    }
}
