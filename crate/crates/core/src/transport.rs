//! Completion sampling: request sizing, the adaptive batch planner, and the
//! transports (HTTP completions endpoint and a scripted replay).

use std::collections::VecDeque;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::promptgen::Prompt;

pub const DEFAULT_STOP_SEQUENCES: [&str; 2] = ["\n#", "</code>"];
pub const DEFAULT_TEMPERATURE: f64 = 0.5;
pub const DEFAULT_BUDGET_FACTOR: usize = 8;
pub const DEFAULT_PARALLEL_LIMIT: usize = 20;
pub const DEFAULT_MAX_TOKENS: usize = 512;
pub const DEFAULT_P_FLOOR: f64 = 0.05;

pub const ENV_ENDPOINT: &str = "TABPROMPT_ENDPOINT";
pub const ENV_API_KEY: &str = "TABPROMPT_API_KEY";
pub const ENV_MODEL: &str = "TABPROMPT_MODEL";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TransportError {
    #[error("network failure after {attempts} attempt(s): {message}")]
    Network { attempts: usize, message: String },
    #[error("authentication rejected: {0}")]
    Auth(String),
    #[error("provider protocol error: {0}")]
    Protocol(String),
    #[error("invalid transport configuration: {0}")]
    Config(String),
}

impl TransportError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, TransportError::Network { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceConfig {
    /// Target number of distinct valid completions.
    pub k: usize,
    /// Upper bound on sampled completions.
    pub budget_max: usize,
    pub temperature: f64,
    pub stop_sequences: Vec<String>,
    /// Largest batch requested in one iteration.
    pub parallel_limit: usize,
    pub max_tokens: usize,
    pub p_floor: f64,
    pub exec_timeout_ms: u64,
}

impl InferenceConfig {
    /// Defaults with `budget_max = 8k`.
    pub fn new(k: usize) -> Self {
        InferenceConfig {
            k,
            budget_max: DEFAULT_BUDGET_FACTOR * k,
            temperature: DEFAULT_TEMPERATURE,
            stop_sequences: DEFAULT_STOP_SEQUENCES
                .iter()
                .map(|s| s.to_string())
                .collect(),
            parallel_limit: DEFAULT_PARALLEL_LIMIT,
            max_tokens: DEFAULT_MAX_TOKENS,
            p_floor: DEFAULT_P_FLOOR,
            exec_timeout_ms: 5_000,
        }
    }

    pub fn validate(&self) -> Result<(), TransportError> {
        let bad = |m: &str| Err(TransportError::Config(m.to_string()));
        if self.k == 0 {
            return bad("k must be positive");
        }
        if self.budget_max < self.k {
            return bad("budget_max must be at least k");
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return bad("temperature must lie in [0, 2]");
        }
        if self.stop_sequences.is_empty() {
            return bad("at least one stop sequence is required");
        }
        if self.parallel_limit == 0 || self.max_tokens == 0 {
            return bad("parallel_limit and max_tokens must be positive");
        }
        if !(self.p_floor > 0.0 && self.p_floor <= 1.0) {
            return bad("p_floor must lie in (0, 1]");
        }
        if self.exec_timeout_ms == 0 {
            return bad("exec_timeout_ms must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PlannerError {
    #[error("no valid completions are needed (r = 0)")]
    NothingNeeded,
    #[error("completion budget exhausted")]
    BudgetExhausted,
    #[error("parallel limit must be positive")]
    ZeroParallelLimit,
    #[error("batch reports {valid} valid of {total}")]
    InvalidCounts { valid: usize, total: usize },
}

/// Tracks remaining budget and the running estimate of the probability that
/// a sampled completion is valid.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchPlanner {
    pub remaining_budget: usize,
    pub needed: usize,
    pub validity_estimate: f64,
    pub attempted: usize,
    pub valid_seen: usize,
    pub p_floor: f64,
}

impl BatchPlanner {
    /// Starts optimistic: `p = 1`, so the first batch asks for exactly `needed`.
    pub fn new(budget: usize, needed: usize, p_floor: f64) -> Self {
        BatchPlanner {
            remaining_budget: budget,
            needed,
            validity_estimate: 1.0,
            attempted: 0,
            valid_seen: 0,
            p_floor,
        }
    }

    /// `min(ceil(r / p), B, L)`.
    pub fn next_batch_size(&self, parallel_limit: usize) -> Result<usize, PlannerError> {
        if self.needed == 0 {
            return Err(PlannerError::NothingNeeded);
        }
        if self.remaining_budget == 0 {
            return Err(PlannerError::BudgetExhausted);
        }
        if parallel_limit == 0 {
            return Err(PlannerError::ZeroParallelLimit);
        }
        let p = self.validity_estimate.clamp(self.p_floor, 1.0);
        let ratio = self.needed as f64 / p;
        // p = valid/attempted makes r/p rational; snap rounding noise such as
        // 7.000000000000001 before taking the ceiling
        let nearest = ratio.round();
        let wanted = if (ratio - nearest).abs() <= 1e-9 * nearest.max(1.0) {
            nearest
        } else {
            ratio.ceil()
        };
        // a huge ratio saturates rather than wrapping
        let wanted = if wanted >= usize::MAX as f64 {
            usize::MAX
        } else {
            wanted as usize
        };
        Ok(wanted.min(self.remaining_budget).min(parallel_limit))
    }

    /// Fold one batch's outcome into the cumulative validity estimate.
    pub fn update_estimate(
        &mut self,
        batch_valid: usize,
        batch_total: usize,
    ) -> Result<(), PlannerError> {
        if batch_valid > batch_total {
            return Err(PlannerError::InvalidCounts {
                valid: batch_valid,
                total: batch_total,
            });
        }
        self.attempted += batch_total;
        self.valid_seen += batch_valid;
        if self.attempted > 0 {
            let ratio = self.valid_seen as f64 / self.attempted as f64;
            self.validity_estimate = ratio.max(self.p_floor);
        }
        Ok(())
    }
}

/// One returned choice.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Choice {
    Text(String),
    Refused(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompletionRequest {
    pub prompt: String,
    pub n: usize,
    pub temperature: f64,
    pub stop: Vec<String>,
    pub max_tokens: usize,
}

/// A source of completions. Implementations handle a single request; splitting
/// and fan-out live in [`sample_completions`].
pub trait CompletionSource: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<Vec<Choice>, TransportError>;

    /// Largest `n` the provider accepts in one request.
    fn max_choices_per_request(&self) -> usize {
        usize::MAX
    }

    /// How many requests may be in flight at once. Sources whose output
    /// depends on call order must keep this at 1.
    fn max_in_flight(&self) -> usize {
        1
    }

    fn model_name(&self) -> &str;
}

/// Result of one `sample_completions` call, ordered by (request, choice).
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    pub choices: Vec<Choice>,
    pub requested: usize,
    pub requests_made: usize,
}

impl SampleBatch {
    /// The provider returned fewer choices than were asked for.
    pub fn truncated(&self) -> bool {
        self.choices.len() < self.requested
    }
}

pub fn sample_completions(
    source: &dyn CompletionSource,
    prompt: &Prompt,
    count: usize,
    config: &InferenceConfig,
) -> Result<SampleBatch, TransportError> {
    if count == 0 {
        return Err(TransportError::Config("count must be at least 1".into()));
    }
    let per_request = source.max_choices_per_request().max(1);
    let requests: Vec<CompletionRequest> = (0..count)
        .step_by(per_request)
        .map(|start| CompletionRequest {
            prompt: prompt.text.clone(),
            n: per_request.min(count - start),
            temperature: config.temperature,
            stop: config.stop_sequences.clone(),
            max_tokens: config.max_tokens,
        })
        .collect();
    let in_flight = source.max_in_flight().min(config.parallel_limit).max(1);

    let mut results: Vec<Result<Vec<Choice>, TransportError>> = Vec::with_capacity(requests.len());
    for wave in requests.chunks(in_flight) {
        if wave.len() == 1 {
            results.push(source.complete(&wave[0]));
            continue;
        }
        std::thread::scope(|scope| {
            let handles: Vec<_> = wave
                .iter()
                .map(|req| scope.spawn(move || source.complete(req)))
                .collect();
            for h in handles {
                results.push(h.join().expect("transport thread panicked"));
            }
        });
    }

    let mut choices = Vec::with_capacity(count);
    for r in results {
        choices.extend(r?);
    }
    Ok(SampleBatch {
        choices,
        requested: count,
        requests_made: requests.len(),
    })
}

/// One scripted response: a completion text or a refusal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScriptEntry {
    Text(String),
    Refusal { refusal: String },
}

/// Replays canned completions in order. Each request for `n` choices takes
/// the next `n` entries; an exhausted script returns fewer.
#[derive(Debug)]
pub struct ScriptedTransport {
    queue: Mutex<VecDeque<ScriptEntry>>,
    per_request_limit: usize,
    requests: AtomicUsize,
    model: String,
}

/// On-disk shape of a single-task mock script.
#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct MockScript {
    pub responses: Vec<ScriptEntry>,
    #[serde(default)]
    pub per_request_limit: Option<usize>,
}

impl ScriptedTransport {
    pub fn new(entries: impl IntoIterator<Item = ScriptEntry>) -> Self {
        ScriptedTransport {
            queue: Mutex::new(entries.into_iter().collect()),
            per_request_limit: usize::MAX,
            requests: AtomicUsize::new(0),
            model: "mock".to_string(),
        }
    }

    pub fn from_texts<S: Into<String>>(texts: impl IntoIterator<Item = S>) -> Self {
        Self::new(texts.into_iter().map(|t| ScriptEntry::Text(t.into())))
    }

    pub fn from_script(script: MockScript) -> Self {
        let mut t = Self::new(script.responses);
        if let Some(limit) = script.per_request_limit {
            t.per_request_limit = limit.max(1);
        }
        t
    }

    pub fn from_file(path: &Path) -> Result<Self, TransportError> {
        let bytes = std::fs::read(path)
            .map_err(|e| TransportError::Config(format!("{}: {e}", path.display())))?;
        let script: MockScript = serde_json::from_slice(&bytes)
            .map_err(|e| TransportError::Config(format!("{}: {e}", path.display())))?;
        Ok(Self::from_script(script))
    }

    pub fn with_per_request_limit(mut self, limit: usize) -> Self {
        self.per_request_limit = limit.max(1);
        self
    }

    pub fn with_model_name(mut self, name: impl Into<String>) -> Self {
        self.model = name.into();
        self
    }

    pub fn requests_observed(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }

    pub fn remaining(&self) -> usize {
        self.queue.lock().expect("script lock").len()
    }
}

impl CompletionSource for ScriptedTransport {
    fn complete(&self, request: &CompletionRequest) -> Result<Vec<Choice>, TransportError> {
        self.requests.fetch_add(1, Ordering::SeqCst);
        let mut queue = self.queue.lock().expect("script lock");
        let take = request.n.min(queue.len());
        Ok(queue
            .drain(..take)
            .map(|e| match e {
                ScriptEntry::Text(t) => Choice::Text(t),
                ScriptEntry::Refusal { refusal } => Choice::Refused(refusal),
            })
            .collect())
    }

    fn max_choices_per_request(&self) -> usize {
        self.per_request_limit
    }

    fn model_name(&self) -> &str {
        &self.model
    }
}

/// Client for an HTTP JSON completions endpoint.
///
/// Sends `{"model", "prompt", "n", "temperature", "stop", "max_tokens"}` and
/// expects `{"choices": [{"text": ..., "index"?: ..., "finish_reason"?: ...}]}`.
pub struct HttpTransport {
    endpoint: String,
    api_key: Option<String>,
    model: String,
    max_retries: usize,
    backoff: Duration,
    per_request_limit: usize,
    parallel: usize,
    agent: ureq::Agent,
}

#[derive(Serialize)]
struct HttpRequestBody<'a> {
    model: &'a str,
    prompt: &'a str,
    n: usize,
    temperature: f64,
    stop: &'a [String],
    max_tokens: usize,
}

#[derive(Deserialize)]
struct HttpResponseBody {
    choices: Vec<HttpChoice>,
}

#[derive(Deserialize)]
struct HttpChoice {
    #[serde(default)]
    text: Option<String>,
    #[serde(default)]
    index: Option<usize>,
    #[serde(default)]
    finish_reason: Option<String>,
    #[serde(default)]
    refusal: Option<String>,
}

enum Attempt {
    Retry(String),
    Fail(TransportError),
}

impl HttpTransport {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(120)))
            .build()
            .into();
        HttpTransport {
            endpoint: endpoint.into(),
            api_key: None,
            model: model.into(),
            max_retries: 3,
            backoff: Duration::from_millis(500),
            per_request_limit: 128,
            parallel: 4,
            agent,
        }
    }

    /// Reads the endpoint, key, and model name from the environment.
    pub fn from_env() -> Result<Self, TransportError> {
        let endpoint = std::env::var(ENV_ENDPOINT)
            .map_err(|_| TransportError::Config(format!("{ENV_ENDPOINT} is not set")))?;
        let model = std::env::var(ENV_MODEL).unwrap_or_else(|_| "default".to_string());
        let mut t = Self::new(endpoint, model);
        t.api_key = std::env::var(ENV_API_KEY).ok();
        Ok(t)
    }

    pub fn with_api_key(mut self, key: impl Into<String>) -> Self {
        self.api_key = Some(key.into());
        self
    }

    pub fn with_retries(mut self, max_retries: usize, backoff: Duration) -> Self {
        self.max_retries = max_retries;
        self.backoff = backoff;
        self
    }

    pub fn with_per_request_limit(mut self, limit: usize) -> Self {
        self.per_request_limit = limit.max(1);
        self
    }

    pub fn with_parallel_requests(mut self, parallel: usize) -> Self {
        self.parallel = parallel.max(1);
        self
    }

    fn attempt(&self, body: &str) -> Result<Vec<Choice>, Attempt> {
        let mut req = self
            .agent
            .post(&self.endpoint)
            .header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send(body).map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Attempt::Retry(e.to_string()))?;
        match status {
            200..=299 => parse_choices(&text).map_err(Attempt::Fail),
            401 | 403 => Err(Attempt::Fail(TransportError::Auth(format!(
                "HTTP {status}"
            )))),
            429 | 500..=599 => Err(Attempt::Retry(format!("HTTP {status}"))),
            _ => Err(Attempt::Fail(TransportError::Protocol(format!(
                "HTTP {status}: {text}"
            )))),
        }
    }
}

fn parse_choices(text: &str) -> Result<Vec<Choice>, TransportError> {
    let body: HttpResponseBody = serde_json::from_str(text)
        .map_err(|e| TransportError::Protocol(format!("malformed response: {e}")))?;
    let mut choices: Vec<(usize, HttpChoice)> = body
        .choices
        .into_iter()
        .enumerate()
        .map(|(pos, c)| (c.index.unwrap_or(pos), c))
        .collect();
    choices.sort_by_key(|(i, _)| *i);
    Ok(choices
        .into_iter()
        .map(
            |(_, c)| match (c.refusal, c.finish_reason.as_deref(), c.text) {
                (Some(reason), _, _) => Choice::Refused(reason),
                (None, Some("content_filter"), _) => Choice::Refused("content_filter".into()),
                (None, _, Some(text)) => Choice::Text(text),
                (None, _, None) => Choice::Refused("empty choice".into()),
            },
        )
        .collect())
}

impl CompletionSource for HttpTransport {
    fn complete(&self, request: &CompletionRequest) -> Result<Vec<Choice>, TransportError> {
        let body = serde_json::to_string(&HttpRequestBody {
            model: &self.model,
            prompt: &request.prompt,
            n: request.n,
            temperature: request.temperature,
            stop: &request.stop,
            max_tokens: request.max_tokens,
        })
        .expect("request serialization");
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.attempt(&body) {
                Ok(choices) => return Ok(choices),
                Err(Attempt::Fail(e)) => return Err(e),
                Err(Attempt::Retry(message)) if attempts > self.max_retries => {
                    return Err(TransportError::Network { attempts, message })
                }
                Err(Attempt::Retry(_)) => std::thread::sleep(self.backoff * attempts as u32),
            }
        }
    }

    fn max_choices_per_request(&self) -> usize {
        self.per_request_limit
    }

    fn max_in_flight(&self) -> usize {
        self.parallel
    }

    fn model_name(&self) -> &str {
        &self.model
    }
}
