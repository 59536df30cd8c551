//! Uniform model-backend abstraction.
//!
//! Three implementations sit behind [`Backend`]: a live OpenAI-compatible
//! HTTP client, a deterministic scripted lookup for tests and golden
//! transcripts, and synthetic stochastic agents for team-dynamics
//! simulation. [`Client`] wraps any backend with request/generation
//! counters and an optional content-addressed completion cache.

mod cache;
mod http;
mod rule_leader;
mod scripted;
mod synthetic;

pub use cache::CompletionCache;
pub use http::{HttpBackend, HttpBackendConfig, ReqwestTransport, Transport};
pub use rule_leader::RuleLeaderBackend;
pub use scripted::{prompt_key, script_key, ScriptedBackend};
pub use synthetic::{synthetic_agent_step, SyntheticAgentParams, SyntheticBackend};

use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// One chat message in the OpenAI messages format.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: "user".into(),
            content: content.into(),
        }
    }
}

/// One model generation: raw text plus optional per-token log-probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generation {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_logprobs: Option<Vec<f64>>,
}

impl Generation {
    pub fn text(text: impl Into<String>) -> Self {
        Generation {
            text: text.into(),
            token_logprobs: None,
        }
    }
}

/// Decoding parameters for one completion call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingParams {
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    /// Samples per call.
    #[serde(default = "default_n")]
    pub n: u32,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_temperature() -> f64 {
    0.7
}
fn default_n() -> u32 {
    1
}
fn default_max_tokens() -> u32 {
    2048
}

impl Default for SamplingParams {
    fn default() -> Self {
        SamplingParams {
            temperature: default_temperature(),
            n: default_n(),
            max_tokens: default_max_tokens(),
            seed: None,
        }
    }
}

impl SamplingParams {
    pub fn with_n(mut self, n: u32) -> Self {
        self.n = n;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 1 {
            return Err(Error::Config("sampling n must be at least 1".into()));
        }
        if self.temperature < 0.0 || !self.temperature.is_finite() {
            return Err(Error::Config(format!(
                "temperature must be a non-negative real, got {}",
                self.temperature
            )));
        }
        if self.max_tokens < 1 {
            return Err(Error::Config("max_tokens must be at least 1".into()));
        }
        Ok(())
    }
}

/// Retry schedule for transient backend failures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetryPolicy {
    #[serde(default = "default_max_attempts")]
    pub max_attempts: u32,
    #[serde(default = "default_base_backoff_ms")]
    pub base_backoff_ms: u64,
}

fn default_max_attempts() -> u32 {
    4
}
fn default_base_backoff_ms() -> u64 {
    250
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: default_max_attempts(),
            base_backoff_ms: default_base_backoff_ms(),
        }
    }
}

/// Backend kinds a run configuration can name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    HttpOpenaiCompat,
    Scripted,
    Synthetic,
}

/// Declarative backend description, as written in run configurations.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendSpec {
    pub kind: BackendKind,
    pub model_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint_url: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auth_env_var: Option<String>,
    /// Required for the scripted kind.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub script_path: Option<PathBuf>,
    /// Required for the synthetic kind.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticAgentParams>,
    /// Seed for synthetic generation streams.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default)]
    pub retry: RetryPolicy,
    /// Per-endpoint in-flight request limit.
    #[serde(default = "default_inflight_limit")]
    pub inflight_limit: usize,
}

fn default_inflight_limit() -> usize {
    8
}

impl BackendSpec {
    pub fn validate(&self) -> Vec<String> {
        let mut problems = Vec::new();
        match self.kind {
            BackendKind::HttpOpenaiCompat => {
                if self.endpoint_url.is_none() {
                    problems.push(format!(
                        "backend {}: http_openai_compat requires endpoint_url",
                        self.model_name
                    ));
                }
            }
            BackendKind::Scripted => {
                if self.script_path.is_none() {
                    problems.push(format!(
                        "backend {}: scripted kind requires script_path",
                        self.model_name
                    ));
                }
            }
            BackendKind::Synthetic => match &self.synthetic {
                None => problems.push(format!(
                    "backend {}: synthetic kind requires synthetic parameters",
                    self.model_name
                )),
                Some(params) => {
                    if let Err(e) = params.validate() {
                        problems.push(format!("backend {}: {e}", self.model_name));
                    }
                }
            },
        }
        if self.inflight_limit == 0 {
            problems.push(format!(
                "backend {}: inflight_limit must be at least 1",
                self.model_name
            ));
        }
        problems
    }

    /// Construct the backend this spec describes.
    pub fn build(&self) -> Result<Arc<dyn Backend>> {
        if let Some(problem) = self.validate().into_iter().next() {
            return Err(Error::Config(problem));
        }
        match self.kind {
            BackendKind::HttpOpenaiCompat => Ok(Arc::new(HttpBackend::new(HttpBackendConfig {
                model_name: self.model_name.clone(),
                endpoint_url: self.endpoint_url.clone().unwrap(),
                auth_env_var: self.auth_env_var.clone(),
                retry: self.retry,
                inflight_limit: self.inflight_limit,
                ..HttpBackendConfig::default()
            }))),
            BackendKind::Scripted => Ok(Arc::new(ScriptedBackend::from_file(
                &self.model_name,
                self.script_path.as_ref().unwrap(),
            )?)),
            BackendKind::Synthetic => Ok(Arc::new(SyntheticBackend::new(
                &self.model_name,
                self.synthetic.clone().unwrap(),
                self.seed.unwrap_or(0),
            )?)),
        }
    }
}

/// A chat-completion model.
pub trait Backend: Send + Sync {
    /// Identifier used in team specs, cache keys, and error messages.
    fn name(&self) -> &str;

    /// Return exactly `params.n` generations for `messages`, order-stable.
    fn complete_chat(&self, messages: &[ChatMessage], params: &SamplingParams)
        -> Result<Vec<Generation>>;
}

/// Content hash identifying one (model, messages, params) request.
pub fn request_key(model_name: &str, messages: &[ChatMessage], params: &SamplingParams) -> String {
    #[derive(Serialize)]
    struct KeyMaterial<'a> {
        model: &'a str,
        messages: &'a [ChatMessage],
        params: &'a SamplingParams,
    }
    let bytes = serde_json::to_vec(&KeyMaterial {
        model: model_name,
        messages,
        params,
    })
    .expect("request key material always serializes");
    hex(&Sha256::digest(&bytes))
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    let mut out = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// Backend handle with instrumentation and an optional completion cache.
///
/// `requests` counts every `complete_chat` call; `backend_requests` counts
/// only calls that reached the underlying backend (cache misses);
/// `generations` counts every generation returned, cached or not.
pub struct Client {
    backend: Arc<dyn Backend>,
    cache: Option<CompletionCache>,
    requests: AtomicU64,
    backend_requests: AtomicU64,
    generations: AtomicU64,
}

impl Client {
    pub fn new(backend: Arc<dyn Backend>) -> Self {
        Client {
            backend,
            cache: None,
            requests: AtomicU64::new(0),
            backend_requests: AtomicU64::new(0),
            generations: AtomicU64::new(0),
        }
    }

    pub fn with_cache(backend: Arc<dyn Backend>, cache: CompletionCache) -> Self {
        let mut client = Client::new(backend);
        client.cache = Some(cache);
        client
    }

    pub fn name(&self) -> &str {
        self.backend.name()
    }

    pub fn complete_chat(
        &self,
        messages: &[ChatMessage],
        params: &SamplingParams,
    ) -> Result<Vec<Generation>> {
        params.validate()?;
        self.requests.fetch_add(1, Ordering::SeqCst);
        let key = self
            .cache
            .as_ref()
            .map(|_| request_key(self.backend.name(), messages, params));
        if let (Some(cache), Some(key)) = (&self.cache, &key) {
            if let Some(hit) = cache.load(key)? {
                self.generations.fetch_add(hit.len() as u64, Ordering::SeqCst);
                return Ok(hit);
            }
        }
        let generations = self.backend.complete_chat(messages, params)?;
        self.backend_requests.fetch_add(1, Ordering::SeqCst);
        self.generations
            .fetch_add(generations.len() as u64, Ordering::SeqCst);
        if let (Some(cache), Some(key)) = (&self.cache, &key) {
            cache.store(key, &generations)?;
        }
        Ok(generations)
    }

    pub fn requests(&self) -> u64 {
        self.requests.load(Ordering::SeqCst)
    }

    pub fn backend_requests(&self) -> u64 {
        self.backend_requests.load(Ordering::SeqCst)
    }

    pub fn generations(&self) -> u64 {
        self.generations.load(Ordering::SeqCst)
    }

    pub fn reset_counters(&self) {
        self.requests.store(0, Ordering::SeqCst);
        self.backend_requests.store(0, Ordering::SeqCst);
        self.generations.store(0, Ordering::SeqCst);
    }
}

/// Counting semaphore bounding in-flight requests per endpoint.
pub(crate) struct Semaphore {
    permits: std::sync::Mutex<usize>,
    available: std::sync::Condvar,
}

impl Semaphore {
    pub(crate) fn new(permits: usize) -> Self {
        Semaphore {
            permits: std::sync::Mutex::new(permits),
            available: std::sync::Condvar::new(),
        }
    }

    pub(crate) fn acquire(&self) -> SemaphoreGuard<'_> {
        let mut permits = self.permits.lock().unwrap();
        while *permits == 0 {
            permits = self.available.wait(permits).unwrap();
        }
        *permits -= 1;
        SemaphoreGuard { semaphore: self }
    }
}

pub(crate) struct SemaphoreGuard<'a> {
    semaphore: &'a Semaphore,
}

impl Drop for SemaphoreGuard<'_> {
    fn drop(&mut self) {
        let mut permits = self.semaphore.permits.lock().unwrap();
        *permits += 1;
        self.semaphore.available.notify_one();
    }
}
