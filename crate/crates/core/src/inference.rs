//! Verdict backends: a completion-style HTTP client and a deterministic mock,
//! both driven through the same grammar-checked parse.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::flags::FlagSet;
use crate::grammar::{self, emit_gbnf, parse_verdict, GrammarSpec, ModelVerdict, Prediction, Probability};

pub const ENV_ENDPOINT: &str = "FLOWPROMPT_ENDPOINT";
pub const ENV_API_KEY: &str = "FLOWPROMPT_API_KEY";

/// Characters per token used for the context-budget check.
pub const CHARS_PER_TOKEN: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Remote,
    Mock,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MockWeights {
    pub bias: f64,
    pub per_flag_weight: f64,
}

impl Default for MockWeights {
    fn default() -> Self {
        MockWeights {
            bias: -3.0,
            per_flag_weight: 1.2,
        }
    }
}

impl MockWeights {
    pub fn p_attack(&self, active_flags: usize) -> f64 {
        let z = self.bias + self.per_flag_weight * active_flags as f64;
        1.0 / (1.0 + (-z).exp())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub endpoint: Option<String>,
    pub model_name: String,
    pub temperature: f64,
    pub top_p: f64,
    /// Context window in tokens.
    pub n_ctx: usize,
    /// Requests in flight.
    pub n_batch: usize,
    pub timeout_secs: f64,
    pub max_retries: u32,
    /// Retry `k` (0-based) waits `backoff_base_secs * 2^k`.
    pub backoff_base_secs: f64,
    pub max_tokens: u32,
    pub grammar: GrammarSpec,
    pub mock: MockWeights,
    /// Latency the mock sleeps for and reports, per item.
    pub mock_latency_ms: u64,
    /// Bearer token, never serialized.
    #[serde(skip)]
    pub api_key: Option<String>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            kind: BackendKind::Mock,
            endpoint: None,
            model_name: "mock".to_string(),
            temperature: 0.0,
            top_p: 1.0,
            n_ctx: 1024,
            n_batch: 1024,
            timeout_secs: 60.0,
            max_retries: 3,
            backoff_base_secs: 0.5,
            max_tokens: 48,
            grammar: emit_gbnf(),
            mock: MockWeights::default(),
            mock_latency_ms: 0,
            api_key: None,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("temperature must be 0 and top_p must be 1 (got {temperature}, {top_p})")]
    NonDeterministicDecoding { temperature: f64, top_p: f64 },
    #[error("n_batch must be at least 1")]
    ZeroBatch,
    #[error("n_ctx must be at least 1")]
    ZeroContext,
    #[error("remote backend needs an endpoint (flag or {ENV_ENDPOINT})")]
    MissingEndpoint,
    #[error("timeout must be positive and finite, got {0}")]
    BadTimeout(f64),
    #[error("backoff base must be non-negative and finite, got {0}")]
    BadBackoff(f64),
    #[error("mock weights must be finite")]
    NonFiniteWeights,
    #[error("grammar does not compile: {0}")]
    Grammar(#[from] grammar::gbnf::GbnfError),
}

impl BackendConfig {
    pub fn mock(weights: MockWeights) -> Self {
        BackendConfig {
            mock: weights,
            ..Default::default()
        }
    }

    pub fn remote(endpoint: impl Into<String>, model_name: impl Into<String>) -> Self {
        BackendConfig {
            kind: BackendKind::Remote,
            endpoint: Some(endpoint.into()),
            model_name: model_name.into(),
            ..Default::default()
        }
    }

    /// Fills `endpoint` and `api_key` from the environment where unset.
    pub fn with_env(mut self) -> Self {
        if self.endpoint.is_none() {
            self.endpoint = std::env::var(ENV_ENDPOINT).ok().filter(|s| !s.is_empty());
        }
        if self.api_key.is_none() {
            self.api_key = std::env::var(ENV_API_KEY).ok().filter(|s| !s.is_empty());
        }
        self
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.temperature != 0.0 || self.top_p != 1.0 {
            return Err(ConfigError::NonDeterministicDecoding {
                temperature: self.temperature,
                top_p: self.top_p,
            });
        }
        if self.n_batch == 0 {
            return Err(ConfigError::ZeroBatch);
        }
        if self.n_ctx == 0 {
            return Err(ConfigError::ZeroContext);
        }
        if !(self.timeout_secs.is_finite() && self.timeout_secs > 0.0) {
            return Err(ConfigError::BadTimeout(self.timeout_secs));
        }
        if !(self.backoff_base_secs.is_finite() && self.backoff_base_secs >= 0.0) {
            return Err(ConfigError::BadBackoff(self.backoff_base_secs));
        }
        if !(self.mock.bias.is_finite() && self.mock.per_flag_weight.is_finite()) {
            return Err(ConfigError::NonFiniteWeights);
        }
        if self.kind == BackendKind::Remote && self.endpoint.is_none() {
            return Err(ConfigError::MissingEndpoint);
        }
        self.grammar.compile()?;
        Ok(())
    }

    fn backoff(&self, retry: u32) -> Duration {
        Duration::from_secs_f64(self.backoff_base_secs * 2f64.powi(retry as i32))
    }
}

/// Why an item has no verdict.
#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum InferenceError {
    #[error("request timed out")]
    Timeout,
    #[error("HTTP status {0}")]
    HttpError(u16),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("response body malformed: {0}")]
    BadResponse(String),
    #[error("completion violates the verdict grammar: {0}")]
    GrammarViolation(String),
    #[error("prompt of {chars} chars exceeds the {n_ctx}-token context")]
    BudgetExceeded { chars: usize, n_ctx: usize },
    #[error("prompt is empty")]
    EmptyPrompt,
}

impl InferenceError {
    pub fn is_retryable(&self) -> bool {
        match self {
            InferenceError::Timeout | InferenceError::Transport(_) => true,
            InferenceError::HttpError(s) => *s == 429 || *s >= 500,
            _ => false,
        }
    }

    /// Short kind tag for CSV output.
    pub fn kind(&self) -> &'static str {
        match self {
            InferenceError::Timeout => "timeout",
            InferenceError::HttpError(_) => "http_error",
            InferenceError::Transport(_) => "transport",
            InferenceError::BadResponse(_) => "bad_response",
            InferenceError::GrammarViolation(_) => "grammar_violation",
            InferenceError::BudgetExceeded { .. } => "budget_exceeded",
            InferenceError::EmptyPrompt => "empty_prompt",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferenceOutcome {
    pub record_id: u64,
    pub result: Result<ModelVerdict, InferenceError>,
    pub latency_ms: f64,
    pub attempts: u32,
}

impl InferenceOutcome {
    pub fn verdict(&self) -> Option<&ModelVerdict> {
        self.result.as_ref().ok()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchItem {
    pub record_id: u64,
    pub prompt: String,
    pub flags: FlagSet,
}

/// Produces raw completion text for one prompt.
pub trait Backend: Sync {
    fn complete(&self, prompt: &str, flags: &FlagSet) -> Result<String, InferenceError>;
}

/// Logistic in the number of active flags, emitted as canonical JSON.
#[derive(Debug, Clone, Copy)]
pub struct MockBackend {
    pub weights: MockWeights,
    pub latency: Duration,
}

impl Backend for MockBackend {
    fn complete(&self, _prompt: &str, flags: &FlagSet) -> Result<String, InferenceError> {
        if !self.latency.is_zero() {
            thread::sleep(self.latency);
        }
        let p = Probability::from_f64(self.weights.p_attack(flags.count()));
        let prediction = if p.as_f64() >= 0.5 {
            Prediction::Attack
        } else {
            Prediction::Benign
        };
        Ok(grammar::canonical_json(prediction, p))
    }
}

/// Completion-style JSON over HTTP.
pub struct RemoteBackend {
    agent: ureq::Agent,
    endpoint: String,
    api_key: Option<String>,
    body_template: Value,
}

impl RemoteBackend {
    pub fn new(config: &BackendConfig) -> Result<Self, ConfigError> {
        let endpoint = config.endpoint.clone().ok_or(ConfigError::MissingEndpoint)?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        let body_template = json!({
            "model": config.model_name,
            "temperature": config.temperature,
            "top_p": config.top_p,
            "max_tokens": config.max_tokens,
            "grammar": config.grammar.gbnf_text,
        });
        Ok(RemoteBackend {
            agent,
            endpoint,
            api_key: config.api_key.clone(),
            body_template,
        })
    }
}

fn map_ureq(e: ureq::Error) -> InferenceError {
    match e {
        ureq::Error::Timeout(_) => InferenceError::Timeout,
        ureq::Error::StatusCode(s) => InferenceError::HttpError(s),
        ureq::Error::Io(io) if io.kind() == std::io::ErrorKind::TimedOut => InferenceError::Timeout,
        other => InferenceError::Transport(other.to_string()),
    }
}

/// Completion text from `choices[0].text`, falling back to `content`.
pub fn completion_text(body: &Value) -> Option<&str> {
    body.pointer("/choices/0/text")
        .and_then(Value::as_str)
        .or_else(|| body.get("content").and_then(Value::as_str))
}

impl Backend for RemoteBackend {
    fn complete(&self, prompt: &str, _flags: &FlagSet) -> Result<String, InferenceError> {
        let mut body = self.body_template.clone();
        body["prompt"] = Value::String(prompt.to_string());
        let mut req = self.agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(&body).map_err(map_ureq)?;
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            return Err(InferenceError::HttpError(status));
        }
        let value: Value = resp.body_mut().read_json().map_err(|e| match map_ureq(e) {
            InferenceError::Transport(msg) => InferenceError::BadResponse(msg),
            other => other,
        })?;
        completion_text(&value)
            .map(str::to_string)
            .ok_or_else(|| InferenceError::BadResponse("no choices[0].text or content".into()))
    }
}

/// A validated config bound to its backend.
pub struct Client {
    config: BackendConfig,
    backend: Box<dyn Backend>,
}

impl Client {
    pub fn new(config: BackendConfig) -> Result<Self, ConfigError> {
        config.validate()?;
        let backend: Box<dyn Backend> = match config.kind {
            BackendKind::Mock => Box::new(MockBackend {
                weights: config.mock,
                latency: Duration::from_millis(config.mock_latency_ms),
            }),
            BackendKind::Remote => Box::new(RemoteBackend::new(&config)?),
        };
        Ok(Client { config, backend })
    }

    /// Uses a caller-supplied backend with `config`'s limits and retries.
    pub fn with_backend(config: BackendConfig, backend: Box<dyn Backend>) -> Result<Self, ConfigError> {
        let mut probe = config.clone();
        probe.kind = BackendKind::Mock;
        probe.validate()?;
        Ok(Client { config, backend })
    }

    pub fn config(&self) -> &BackendConfig {
        &self.config
    }

    pub fn check_budget(&self, prompt: &str) -> Result<(), InferenceError> {
        if prompt.is_empty() {
            return Err(InferenceError::EmptyPrompt);
        }
        let chars = prompt.chars().count();
        if chars.div_ceil(CHARS_PER_TOKEN) > self.config.n_ctx {
            return Err(InferenceError::BudgetExceeded {
                chars,
                n_ctx: self.config.n_ctx,
            });
        }
        Ok(())
    }

    pub fn classify(&self, record_id: u64, prompt: &str, flags: &FlagSet) -> InferenceOutcome {
        let start = Instant::now();
        if let Err(e) = self.check_budget(prompt) {
            return InferenceOutcome {
                record_id,
                result: Err(e),
                latency_ms: 0.0,
                attempts: 0,
            };
        }
        let mut attempts = 0;
        let result = loop {
            attempts += 1;
            let r = self
                .backend
                .complete(prompt, flags)
                .and_then(|text| parse_verdict(&text).map_err(|e| InferenceError::GrammarViolation(e.to_string())));
            match r {
                Err(e) if e.is_retryable() && attempts <= self.config.max_retries => {
                    log::debug!("record {record_id}: attempt {attempts} failed ({e}), retrying");
                    thread::sleep(self.config.backoff(attempts - 1));
                }
                other => break other,
            }
        };
        let latency_ms = match self.config.kind {
            BackendKind::Mock => (self.config.mock_latency_ms * u64::from(attempts)) as f64,
            BackendKind::Remote => start.elapsed().as_secs_f64() * 1e3,
        };
        InferenceOutcome {
            record_id,
            result,
            latency_ms,
            attempts,
        }
    }

    /// Outcomes in input order with at most `n_batch` requests in flight.
    pub fn classify_batch(&self, items: &[BatchItem]) -> Vec<InferenceOutcome> {
        let workers = self.config.n_batch.min(items.len()).max(1);
        let next = AtomicUsize::new(0);
        let slots: Vec<Mutex<Option<InferenceOutcome>>> = items.iter().map(|_| Mutex::new(None)).collect();
        thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some(item) = items.get(i) else { break };
                    let outcome = self.classify(item.record_id, &item.prompt, &item.flags);
                    *slots[i].lock().expect("slot lock") = Some(outcome);
                });
            }
        });
        slots
            .into_iter()
            .map(|m| m.into_inner().expect("slot lock").expect("every slot filled"))
            .collect()
    }
}

pub fn classify_flow(config: &BackendConfig, prompt: &str, flags: &FlagSet) -> Result<InferenceOutcome, ConfigError> {
    Ok(Client::new(config.clone())?.classify(0, prompt, flags))
}

pub fn classify_batch(config: &BackendConfig, items: &[BatchItem]) -> Result<Vec<InferenceOutcome>, ConfigError> {
    Ok(Client::new(config.clone())?.classify_batch(items))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::atomic::AtomicU32;
    use std::sync::Arc;

    fn flags_with(n: usize) -> FlagSet {
        let mut a = [false; 6];
        a.iter_mut().take(n).for_each(|f| *f = true);
        FlagSet::from_array(a)
    }

    #[test]
    fn mock_logistic_examples() {
        let c = Client::new(BackendConfig::default()).unwrap();
        let v = c.classify(1, "p", &flags_with(0)).result.unwrap();
        let expect0 = 1.0 / (1.0 + 3f64.exp());
        assert!((expect0 - 0.0474).abs() < 5e-5);
        assert_eq!(v.p_attack, Probability::from_f64(expect0));
        assert_eq!(v.prediction, Prediction::Benign);

        let v = c.classify(2, "p", &flags_with(3)).result.unwrap();
        let expect3 = 1.0 / (1.0 + (-0.6f64).exp());
        assert!((expect3 - 0.6457).abs() < 5e-5);
        assert_eq!(v.p_attack, Probability::from_f64(expect3));
        assert_eq!(v.prediction, Prediction::Attack);
    }

    #[test]
    fn mock_batch_is_ordered_and_deterministic() {
        let items: Vec<BatchItem> = (0..1000u64)
            .map(|i| BatchItem {
                record_id: 1000 - i,
                prompt: format!("flow {i}"),
                flags: flags_with((i % 7) as usize),
            })
            .collect();
        let cfg = BackendConfig {
            n_batch: 8,
            ..Default::default()
        };
        let a = classify_batch(&cfg, &items).unwrap();
        let b = classify_batch(&cfg, &items).unwrap();
        assert_eq!(a, b);
        for (o, it) in a.iter().zip(&items) {
            assert_eq!(o.record_id, it.record_id);
            assert_eq!(o.attempts, 1);
        }
    }

    #[test]
    fn budget_check() {
        let c = Client::new(BackendConfig {
            n_ctx: 10,
            ..Default::default()
        })
        .unwrap();
        assert!(c.check_budget(&"x".repeat(30)).is_ok());
        let o = c.classify(1, &"x".repeat(31), &flags_with(0));
        assert!(matches!(o.result, Err(InferenceError::BudgetExceeded { chars: 31, .. })));
        assert_eq!(o.attempts, 0);
        assert_eq!(c.classify(1, "", &flags_with(0)).result, Err(InferenceError::EmptyPrompt));
    }

    #[test]
    fn config_validation() {
        let bad = BackendConfig {
            temperature: 0.7,
            ..Default::default()
        };
        assert!(matches!(bad.validate(), Err(ConfigError::NonDeterministicDecoding { .. })));
        let bad = BackendConfig {
            n_batch: 0,
            ..Default::default()
        };
        assert_eq!(bad.validate(), Err(ConfigError::ZeroBatch));
        let remote = BackendConfig {
            kind: BackendKind::Remote,
            ..Default::default()
        };
        assert_eq!(remote.validate(), Err(ConfigError::MissingEndpoint));
        let json = serde_json::to_string(&BackendConfig {
            api_key: Some("secret".into()),
            ..Default::default()
        })
        .unwrap();
        assert!(!json.contains("secret"));
    }

    /// One-shot HTTP server answering each connection via `reply(n)`.
    /// `reply` returns (status, body, delay before answering).
    fn serve<F>(reply: F) -> (String, Arc<AtomicU32>, Arc<Mutex<Vec<Value>>>)
    where
        F: Fn(u32) -> (u16, String, Duration) + Send + Sync + 'static,
    {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let hits = Arc::new(AtomicU32::new(0));
        let bodies = Arc::new(Mutex::new(Vec::new()));
        let reply = Arc::new(reply);
        let (h, b) = (hits.clone(), bodies.clone());
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { break };
                let n = h.fetch_add(1, Ordering::SeqCst);
                let (reply, bodies) = (reply.clone(), b.clone());
                thread::spawn(move || {
                    let mut reader = BufReader::new(stream.try_clone().unwrap());
                    let mut len = 0usize;
                    loop {
                        let mut line = String::new();
                        if reader.read_line(&mut line).unwrap_or(0) == 0 {
                            return;
                        }
                        let lower = line.to_ascii_lowercase();
                        if let Some(v) = lower.strip_prefix("content-length:") {
                            len = v.trim().parse().unwrap();
                        }
                        if line == "\r\n" {
                            break;
                        }
                    }
                    let mut buf = vec![0; len];
                    reader.read_exact(&mut buf).unwrap();
                    if let Ok(v) = serde_json::from_slice(&buf) {
                        bodies.lock().unwrap().push(v);
                    }
                    let (status, body, delay) = reply(n);
                    thread::sleep(delay);
                    let _ = write!(
                        stream,
                        "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                        body.len()
                    );
                });
            }
        });
        (format!("http://{addr}/completion"), hits, bodies)
    }

    fn remote_cfg(endpoint: String) -> BackendConfig {
        BackendConfig {
            backoff_base_secs: 0.001,
            timeout_secs: 2.0,
            ..BackendConfig::remote(endpoint, "test-model")
        }
    }

    fn choice(text: &str) -> String {
        json!({"choices": [{"text": text}]}).to_string()
    }

    #[test]
    fn remote_success_sends_decoding_fields() {
        let (url, _, bodies) = serve(|_| (200, choice(r#"{"prediction":"attack","p_attack":0.7}"#), Duration::ZERO));
        let o = classify_flow(&remote_cfg(url), "hello", &flags_with(0)).unwrap();
        let v = o.result.unwrap();
        assert_eq!(v.prediction, Prediction::Attack);
        assert_eq!(v.p_attack.ten_thousandths(), 7000);
        assert_eq!(o.attempts, 1);
        let sent = bodies.lock().unwrap()[0].clone();
        assert_eq!(sent["prompt"], "hello");
        assert_eq!(sent["temperature"], 0.0);
        assert_eq!(sent["top_p"], 1.0);
        assert_eq!(sent["grammar"], grammar::VERDICT_GBNF);
    }

    #[test]
    fn remote_content_fallback() {
        let body = json!({"content": r#"{"prediction":"benign","p_attack":0.1}"#}).to_string();
        let (url, _, _) = serve(move |_| (200, body.clone(), Duration::ZERO));
        let o = classify_flow(&remote_cfg(url), "x", &flags_with(0)).unwrap();
        assert_eq!(o.result.unwrap().prediction, Prediction::Benign);
    }

    #[test]
    fn remote_extra_tokens_violate_grammar() {
        let (url, hits, _) = serve(|_| (200, choice(r#"OK: {"prediction":"attack","p_attack":0.7}"#), Duration::ZERO));
        let o = classify_flow(&remote_cfg(url), "x", &flags_with(0)).unwrap();
        assert!(matches!(o.result, Err(InferenceError::GrammarViolation(_))));
        assert_eq!(o.attempts, 1);
        assert_eq!(hits.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn remote_retries_server_errors_then_succeeds() {
        let (url, hits, _) = serve(|n| {
            if n < 2 {
                (503, "{}".into(), Duration::ZERO)
            } else {
                (200, choice(r#"{"prediction":"benign","p_attack":0.2}"#), Duration::ZERO)
            }
        });
        let o = classify_flow(&remote_cfg(url), "x", &flags_with(0)).unwrap();
        assert!(o.result.is_ok());
        assert_eq!(o.attempts, 3);
        assert_eq!(hits.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn remote_client_errors_are_not_retried() {
        let (url, hits, _) = serve(|_| (400, "{}".into(), Duration::ZERO));
        let o = classify_flow(&remote_cfg(url), "x", &flags_with(0)).unwrap();
        assert_eq!(o.result, Err(InferenceError::HttpError(400)));
        assert_eq!(hits.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn remote_timeouts_exhaust_retries_and_keep_length() {
        let (url, _, _) = serve(|_| (200, choice("{}"), Duration::from_millis(400)));
        let cfg = BackendConfig {
            timeout_secs: 0.05,
            max_retries: 1,
            n_batch: 4,
            ..remote_cfg(url)
        };
        let items: Vec<BatchItem> = (0..4)
            .map(|i| BatchItem {
                record_id: i,
                prompt: "x".into(),
                flags: flags_with(0),
            })
            .collect();
        let out = classify_batch(&cfg, &items).unwrap();
        assert_eq!(out.len(), 4);
        for o in &out {
            assert_eq!(o.result, Err(InferenceError::Timeout));
            assert_eq!(o.attempts, cfg.max_retries + 1);
        }
    }

    #[test]
    fn remote_batch_latency_accounting() {
        let (url, _, _) = serve(|_| (200, choice(r#"{"prediction":"attack","p_attack":0.9}"#), Duration::from_millis(30)));
        let cfg = BackendConfig {
            n_batch: 4,
            ..remote_cfg(url)
        };
        let items: Vec<BatchItem> = (0..12)
            .map(|i| BatchItem {
                record_id: i,
                prompt: format!("p{i}"),
                flags: flags_with(0),
            })
            .collect();
        let start = Instant::now();
        let out = classify_batch(&cfg, &items).unwrap();
        let wall = start.elapsed().as_secs_f64() * 1e3;
        let sum: f64 = out.iter().map(|o| o.latency_ms).sum();
        let max = out.iter().map(|o| o.latency_ms).fold(0.0, f64::max);
        assert!(out.iter().all(|o| o.result.is_ok()));
        assert!(sum >= max);
        assert!(wall <= sum, "wall {wall} > sum {sum}");
        assert_eq!(out.iter().map(|o| o.record_id).collect::<Vec<_>>(), (0..12).collect::<Vec<_>>());
    }
}
