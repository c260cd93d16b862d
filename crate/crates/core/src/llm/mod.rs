//! Pluggable completion backends with persistent caching, bounded
//! concurrency, retries, and token/cost accounting.
//!
//! [`CompletionClient`] is the single entry point: it consults the cache,
//! coalesces concurrent requests for the same key, bounds in-flight backend
//! calls, retries transient failures with exponential backoff, and persists
//! every fresh completion. Re-running a pipeline against a warm cache
//! performs zero backend calls.

mod cache;
#[cfg(feature = "http")]
mod http;
mod mock;

pub use cache::{cache_key, CompletionCache};
#[cfg(feature = "http")]
pub use http::HttpBackend;
pub use mock::{MockBackend, MockRule, ReplayBackend};

use std::collections::HashSet;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("api key environment variable {env} is not set")]
    MissingApiKey { env: String },
    #[error("backend error: {reason}")]
    Backend { reason: String, transient: bool },
    #[error("backend unavailable after {attempts} attempts: {reason}")]
    Unavailable { attempts: u32, reason: String },
    #[error("mock fixture has no response for prompt ending `{preview}`")]
    MockMiss { preview: String },
    #[error("replay cache has no entry for prompt ending `{preview}` (network forbidden)")]
    ReplayMiss { preview: String },
    #[error("cache {path}: {reason}")]
    Cache { path: String, reason: String },
    #[error("mock fixture {path}: {reason}")]
    Fixture { path: String, reason: String },
    #[error("empty prompt")]
    EmptyPrompt,
}

impl LlmError {
    /// True for failures that mean the backend cannot serve this run at
    /// all, as opposed to a single degraded answer.
    pub fn is_backend_failure(&self) -> bool {
        matches!(
            self,
            LlmError::Unavailable { .. }
                | LlmError::MockMiss { .. }
                | LlmError::ReplayMiss { .. }
                | LlmError::MissingApiKey { .. }
                | LlmError::Backend { .. }
        )
    }
}

/// Raw output of one backend invocation.
#[derive(Debug, Clone)]
pub struct BackendResponse {
    pub text: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
}

/// Sampling parameters. Defaults to temperature 0 for reproducibility and
/// maximal cache hit rates.
#[derive(Debug, Clone)]
pub struct GenerationParams {
    pub temperature: f64,
    pub max_completion_tokens: Option<u32>,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            max_completion_tokens: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Http,
    Mock,
    Replay,
}

/// One completed LLM round-trip.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompletionRecord {
    pub cache_key: String,
    pub prompt: String,
    pub response: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
    /// Unix seconds at completion time.
    pub timestamp: u64,
    pub backend: BackendKind,
}

/// A completion plus whether it was served from cache.
#[derive(Debug, Clone)]
pub struct CompletionOutcome {
    pub record: CompletionRecord,
    pub cache_hit: bool,
}

pub trait CompletionBackend: Send + Sync {
    fn id(&self) -> &'static str;
    fn complete(
        &self,
        prompt: &str,
        params: &GenerationParams,
    ) -> Result<BackendResponse, LlmError>;
}

fn backend_kind(id: &str) -> BackendKind {
    match id {
        "http" => BackendKind::Http,
        "replay" => BackendKind::Replay,
        _ => BackendKind::Mock,
    }
}

/// Counting semaphore; `std` has none and this needs only acquire/release.
struct Semaphore {
    permits: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn new(permits: usize) -> Self {
        Self {
            permits: Mutex::new(permits.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> SemaphoreGuard<'_> {
        let mut permits = self.permits.lock().unwrap();
        while *permits == 0 {
            permits = self.cv.wait(permits).unwrap();
        }
        *permits -= 1;
        SemaphoreGuard { sem: self }
    }
}

struct SemaphoreGuard<'a> {
    sem: &'a Semaphore,
}

impl Drop for SemaphoreGuard<'_> {
    fn drop(&mut self) {
        *self.sem.permits.lock().unwrap() += 1;
        self.sem.cv.notify_one();
    }
}

/// Retry policy for transient backend failures.
#[derive(Debug, Clone)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            base_delay: Duration::from_millis(250),
        }
    }
}

impl RetryPolicy {
    /// No waiting between attempts; used by tests.
    pub fn immediate(max_attempts: u32) -> Self {
        Self {
            max_attempts,
            base_delay: Duration::ZERO,
        }
    }
}

pub struct CompletionClient {
    backend: Arc<dyn CompletionBackend>,
    cache: CompletionCache,
    /// Namespace used for cache keys. For a replay client this is the id of
    /// the backend that populated the cache, so keys line up.
    namespace: String,
    model: String,
    params: GenerationParams,
    retry: RetryPolicy,
    semaphore: Semaphore,
    in_flight: Mutex<HashSet<String>>,
    in_flight_cv: Condvar,
    backend_calls: AtomicU64,
    cache_hits: AtomicU64,
}

impl CompletionClient {
    pub fn new(backend: Arc<dyn CompletionBackend>, cache: CompletionCache, model: &str) -> Self {
        let namespace = backend.id().to_string();
        Self::with_namespace(backend, cache, model, &namespace)
    }

    /// A client whose cache keys are computed under `namespace` rather than
    /// the backend's own id. Replay clients pass the replayed backend's id.
    pub fn with_namespace(
        backend: Arc<dyn CompletionBackend>,
        cache: CompletionCache,
        model: &str,
        namespace: &str,
    ) -> Self {
        Self {
            backend,
            cache,
            namespace: namespace.to_string(),
            model: model.to_string(),
            params: GenerationParams::default(),
            retry: RetryPolicy::default(),
            semaphore: Semaphore::new(4),
            in_flight: Mutex::new(HashSet::new()),
            in_flight_cv: Condvar::new(),
            backend_calls: AtomicU64::new(0),
            cache_hits: AtomicU64::new(0),
        }
    }

    pub fn with_params(mut self, params: GenerationParams) -> Self {
        self.params = params;
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_concurrency(mut self, limit: usize) -> Self {
        self.semaphore = Semaphore::new(limit);
        self
    }

    pub fn model(&self) -> &str {
        &self.model
    }

    pub fn namespace(&self) -> &str {
        &self.namespace
    }

    /// Backend invocations performed by this client (cache hits excluded).
    pub fn backend_calls(&self) -> u64 {
        self.backend_calls.load(Ordering::SeqCst)
    }

    pub fn cache_hits(&self) -> u64 {
        self.cache_hits.load(Ordering::SeqCst)
    }

    /// Completes a prompt, serving from cache when possible. Concurrent
    /// requests for the same key coalesce into one backend call.
    pub fn complete(&self, prompt: &str) -> Result<CompletionOutcome, LlmError> {
        if prompt.trim().is_empty() {
            return Err(LlmError::EmptyPrompt);
        }
        let key = cache_key(&self.namespace, &self.model, prompt);
        loop {
            if let Some(record) = self.cache.get(&key) {
                self.cache_hits.fetch_add(1, Ordering::SeqCst);
                return Ok(CompletionOutcome {
                    record,
                    cache_hit: true,
                });
            }
            let mut in_flight = self.in_flight.lock().unwrap();
            if in_flight.insert(key.clone()) {
                break;
            }
            // Another thread is computing this key; wait and re-check.
            let _unused = self.in_flight_cv.wait(in_flight).unwrap();
        }

        let result = self.complete_uncached(prompt, &key);

        let mut in_flight = self.in_flight.lock().unwrap();
        in_flight.remove(&key);
        self.in_flight_cv.notify_all();
        drop(in_flight);

        result.map(|record| CompletionOutcome {
            record,
            cache_hit: false,
        })
    }

    fn complete_uncached(&self, prompt: &str, key: &str) -> Result<CompletionRecord, LlmError> {
        let _permit = self.semaphore.acquire();
        let mut attempt = 0;
        let response = loop {
            attempt += 1;
            self.backend_calls.fetch_add(1, Ordering::SeqCst);
            match self.backend.complete(prompt, &self.params) {
                Ok(response) => break response,
                Err(LlmError::Backend { reason, transient }) if transient => {
                    if attempt >= self.retry.max_attempts {
                        return Err(LlmError::Unavailable {
                            attempts: attempt,
                            reason,
                        });
                    }
                    let backoff = self.retry.base_delay * 2u32.saturating_pow(attempt - 1);
                    if !backoff.is_zero() {
                        std::thread::sleep(backoff);
                    }
                }
                Err(other) => return Err(other),
            }
        };
        let record = CompletionRecord {
            cache_key: key.to_string(),
            prompt: prompt.to_string(),
            response: response.text,
            input_tokens: response.input_tokens,
            output_tokens: response.output_tokens,
            timestamp: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            backend: backend_kind(self.backend.id()),
        };
        self.cache.insert(record)
    }
}

/// Per-1K-token prices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub input_price_per_1k: f64,
    pub output_price_per_1k: f64,
}

impl CostModel {
    pub fn new(input_price_per_1k: f64, output_price_per_1k: f64) -> Self {
        assert!(input_price_per_1k >= 0.0 && output_price_per_1k >= 0.0);
        Self {
            input_price_per_1k,
            output_price_per_1k,
        }
    }

    pub fn cost(&self, input_tokens: u64, output_tokens: u64) -> f64 {
        input_tokens as f64 / 1000.0 * self.input_price_per_1k
            + output_tokens as f64 / 1000.0 * self.output_price_per_1k
    }
}

/// Token totals attributed to one pipeline step.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepTokens {
    pub step: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
}

impl StepTokens {
    pub fn new(step: impl Into<String>) -> Self {
        Self {
            step: step.into(),
            input_tokens: 0,
            output_tokens: 0,
        }
    }

    pub fn add_record(&mut self, record: &CompletionRecord) {
        self.input_tokens += record.input_tokens;
        self.output_tokens += record.output_tokens;
    }
}

/// Cost broken down per pipeline step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub per_step: Vec<(String, f64)>,
    pub total: f64,
}

/// cost = Σ input/1000·p_in + output/1000·p_out over the given steps.
/// An empty slice totals zero.
pub fn estimate_cost(steps: &[StepTokens], model: &CostModel) -> CostBreakdown {
    let mut per_step = Vec::with_capacity(steps.len());
    let mut total = 0.0;
    for step in steps {
        let cost = model.cost(step.input_tokens, step.output_tokens);
        per_step.push((step.step.clone(), cost));
        total += cost;
    }
    CostBreakdown { per_step, total }
}

/// Sums a record set into a single step's totals.
pub fn records_to_step(step: &str, records: &[CompletionRecord]) -> StepTokens {
    let mut out = StepTokens::new(step);
    for r in records {
        out.add_record(r);
    }
    out
}

/// Formats dollars with five decimals, rounding half away from zero, the
/// way per-image costs are conventionally quoted.
pub fn format_dollars(cost: f64) -> String {
    let scaled = (cost * 100_000.0).round() as i64;
    format!("${}.{:05}", scaled / 100_000, (scaled % 100_000).abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::AtomicU32;
    use std::sync::Barrier;

    struct FlakyBackend {
        failures_before_success: AtomicU32,
    }

    impl CompletionBackend for FlakyBackend {
        fn id(&self) -> &'static str {
            "mock"
        }
        fn complete(
            &self,
            _prompt: &str,
            _params: &GenerationParams,
        ) -> Result<BackendResponse, LlmError> {
            let left = self.failures_before_success.load(Ordering::SeqCst);
            if left > 0 {
                self.failures_before_success.fetch_sub(1, Ordering::SeqCst);
                return Err(LlmError::Backend {
                    reason: "simulated outage".into(),
                    transient: true,
                });
            }
            Ok(BackendResponse {
                text: "ok".into(),
                input_tokens: 1,
                output_tokens: 1,
            })
        }
    }

    fn mock_client(pairs: &[(&str, &str)]) -> CompletionClient {
        CompletionClient::new(
            Arc::new(MockBackend::from_pairs(pairs)),
            CompletionCache::in_memory(),
            "test-model",
        )
    }

    #[test]
    fn second_call_is_a_cache_hit_with_identical_record() {
        let client = mock_client(&[("hello", "<a, on, b>")]);
        let first = client.complete("hello world").unwrap();
        let second = client.complete("hello world").unwrap();
        assert!(!first.cache_hit);
        assert!(second.cache_hit);
        assert_eq!(first.record.response, second.record.response);
        assert_eq!(first.record.cache_key, second.record.cache_key);
        assert_eq!(client.backend_calls(), 1);
    }

    #[test]
    fn mock_miss_surfaces_distinctly() {
        let client = mock_client(&[("known", "yes")]);
        assert!(matches!(
            client.complete("something else entirely"),
            Err(LlmError::MockMiss { .. })
        ));
    }

    #[test]
    fn empty_prompt_rejected() {
        let client = mock_client(&[]);
        assert!(matches!(client.complete("  "), Err(LlmError::EmptyPrompt)));
    }

    #[test]
    fn transient_failures_retry_then_succeed() {
        let backend = Arc::new(FlakyBackend {
            failures_before_success: AtomicU32::new(2),
        });
        let client = CompletionClient::new(backend, CompletionCache::in_memory(), "m")
            .with_retry(RetryPolicy::immediate(3));
        let out = client.complete("p").unwrap();
        assert_eq!(out.record.response, "ok");
        assert_eq!(client.backend_calls(), 3);
    }

    #[test]
    fn exhausted_retries_report_unavailable() {
        let backend = Arc::new(FlakyBackend {
            failures_before_success: AtomicU32::new(10),
        });
        let client = CompletionClient::new(backend, CompletionCache::in_memory(), "m")
            .with_retry(RetryPolicy::immediate(3));
        assert!(matches!(
            client.complete("p"),
            Err(LlmError::Unavailable { attempts: 3, .. })
        ));
    }

    #[test]
    fn concurrent_same_prompt_coalesces_to_one_call() {
        let client = Arc::new(mock_client(&[("p", "r")]));
        let barrier = Arc::new(Barrier::new(8));
        std::thread::scope(|scope| {
            for _ in 0..8 {
                let client = Arc::clone(&client);
                let barrier = Arc::clone(&barrier);
                scope.spawn(move || {
                    barrier.wait();
                    client.complete("p").unwrap();
                });
            }
        });
        assert_eq!(client.backend_calls(), 1);
    }

    #[test]
    fn replay_serves_cache_and_refuses_network() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        {
            let client = CompletionClient::new(
                Arc::new(MockBackend::from_pairs(&[("p", "resp")])),
                CompletionCache::open(&path).unwrap(),
                "m",
            );
            client.complete("p").unwrap();
        }
        let replay = CompletionClient::with_namespace(
            Arc::new(ReplayBackend),
            CompletionCache::open(&path).unwrap(),
            "m",
            "mock",
        );
        let out = replay.complete("p").unwrap();
        assert!(out.cache_hit);
        assert_eq!(out.record.response, "resp");
        assert!(matches!(
            replay.complete("never seen"),
            Err(LlmError::ReplayMiss { .. })
        ));
    }

    #[test]
    fn cost_reproduces_per_image_step_costs() {
        // Per-image token counts per step, at $0.0005/$0.0015 per 1K.
        let model = CostModel::new(0.0005, 0.0015);
        let cases = [
            (520u64, 160u64, 0.00050),
            (890, 480, 0.00117),
            (1180, 110, 0.00076),
            (820, 110, 0.00058),
        ];
        for (input, output, expected) in cases {
            let cost = model.cost(input, output);
            assert!(
                (cost - expected).abs() <= 0.00001,
                "({input},{output}) -> {cost} vs {expected}"
            );
        }
        assert_eq!(model.cost(0, 0), 0.0);
    }

    #[test]
    fn estimate_cost_is_linear_over_disjoint_sets() {
        let model = CostModel::new(0.0005, 0.0015);
        let a = StepTokens {
            step: "a".into(),
            input_tokens: 1234,
            output_tokens: 567,
        };
        let b = StepTokens {
            step: "b".into(),
            input_tokens: 89,
            output_tokens: 1011,
        };
        let separate = estimate_cost(std::slice::from_ref(&a), &model).total
            + estimate_cost(std::slice::from_ref(&b), &model).total;
        let together = estimate_cost(&[a, b], &model).total;
        assert!((separate - together).abs() < 1e-12);
        assert_eq!(estimate_cost(&[], &model).total, 0.0);
    }

    #[test]
    fn dollar_formatting_matches_quoted_costs() {
        let model = CostModel::new(0.0005, 0.0015);
        assert_eq!(format_dollars(model.cost(520, 160)), "$0.00050");
        assert_eq!(format_dollars(model.cost(890, 480)), "$0.00117");
        assert_eq!(format_dollars(model.cost(1180, 110)), "$0.00076");
        assert_eq!(format_dollars(model.cost(820, 110)), "$0.00058");
        assert_eq!(format_dollars(0.0), "$0.00000");
    }
}
