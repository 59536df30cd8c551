//! OpenAI-compatible chat-completions client.
//!
//! POSTs to `<endpoint>/v1/chat/completions` with bearer auth taken from a
//! named environment variable. Retries 429/5xx/transport failures with
//! exponential backoff plus jitter; any other non-2xx status fails
//! immediately. The wire layer sits behind [`Transport`] so tests can
//! substitute an instrumented mock.

use std::time::Duration;

use rand::Rng;
use serde::Deserialize;
use serde_json::json;

use crate::backends::{Backend, ChatMessage, Generation, RetryPolicy, SamplingParams, Semaphore};
use crate::error::{Error, Result};

/// Minimal HTTP POST surface the backend needs.
pub trait Transport: Send + Sync {
    /// Returns (status, body) on any HTTP exchange; `Err` means the request
    /// never completed (connect/timeout/IO).
    fn post_json(
        &self,
        url: &str,
        bearer: Option<&str>,
        body: &serde_json::Value,
    ) -> std::result::Result<(u16, String), String>;
}

/// Production transport over a blocking HTTP client.
pub struct ReqwestTransport {
    client: reqwest::blocking::Client,
}

impl ReqwestTransport {
    pub fn new(timeout: Duration) -> Self {
        ReqwestTransport {
            client: reqwest::blocking::Client::builder()
                .timeout(timeout)
                .build()
                .expect("http client construction"),
        }
    }
}

impl Transport for ReqwestTransport {
    fn post_json(
        &self,
        url: &str,
        bearer: Option<&str>,
        body: &serde_json::Value,
    ) -> std::result::Result<(u16, String), String> {
        let mut request = self.client.post(url).json(body);
        if let Some(token) = bearer {
            request = request.bearer_auth(token);
        }
        let response = request.send().map_err(|e| e.to_string())?;
        let status = response.status().as_u16();
        let text = response.text().map_err(|e| e.to_string())?;
        Ok((status, text))
    }
}

#[derive(Debug, Clone)]
pub struct HttpBackendConfig {
    pub model_name: String,
    pub endpoint_url: String,
    /// Name of the environment variable holding the bearer token.
    pub auth_env_var: Option<String>,
    pub retry: RetryPolicy,
    pub inflight_limit: usize,
    pub timeout: Duration,
    /// Ask the server for per-token log-probabilities.
    pub request_logprobs: bool,
}

impl Default for HttpBackendConfig {
    fn default() -> Self {
        HttpBackendConfig {
            model_name: String::new(),
            endpoint_url: String::new(),
            auth_env_var: None,
            retry: RetryPolicy::default(),
            inflight_limit: 8,
            timeout: Duration::from_secs(300),
            request_logprobs: false,
        }
    }
}

pub struct HttpBackend {
    config: HttpBackendConfig,
    transport: Box<dyn Transport>,
    inflight: Semaphore,
}

impl HttpBackend {
    pub fn new(config: HttpBackendConfig) -> Self {
        let transport = Box::new(ReqwestTransport::new(config.timeout));
        Self::with_transport(config, transport)
    }

    pub fn with_transport(config: HttpBackendConfig, transport: Box<dyn Transport>) -> Self {
        let inflight = Semaphore::new(config.inflight_limit.max(1));
        HttpBackend {
            config,
            transport,
            inflight,
        }
    }

    fn url(&self) -> String {
        let base = self.config.endpoint_url.trim_end_matches('/');
        if base.ends_with("/chat/completions") {
            base.to_string()
        } else {
            format!("{base}/v1/chat/completions")
        }
    }

    fn bearer(&self) -> Option<String> {
        self.config
            .auth_env_var
            .as_ref()
            .and_then(|var| std::env::var(var).ok())
    }

    fn request_body(&self, messages: &[ChatMessage], params: &SamplingParams) -> serde_json::Value {
        let mut body = json!({
            "model": self.config.model_name,
            "messages": messages,
            "temperature": params.temperature,
            "n": params.n,
            "max_tokens": params.max_tokens,
        });
        if let Some(seed) = params.seed {
            body["seed"] = json!(seed);
        }
        if self.config.request_logprobs {
            body["logprobs"] = json!(true);
        }
        body
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let base = self.config.retry.base_backoff_ms;
        let exp = base.saturating_mul(1u64 << (attempt - 1).min(10));
        let jitter = if base > 1 {
            rand::rng().random_range(0..base / 2 + 1)
        } else {
            0
        };
        Duration::from_millis(exp.saturating_add(jitter).min(30_000))
    }
}

fn retryable(status: u16) -> bool {
    status == 429 || (500..600).contains(&status)
}

#[derive(Deserialize)]
struct ApiResponse {
    choices: Vec<ApiChoice>,
}

#[derive(Deserialize)]
struct ApiChoice {
    message: ApiMessage,
    #[serde(default)]
    logprobs: Option<ApiLogprobs>,
}

#[derive(Deserialize)]
struct ApiMessage {
    content: String,
}

#[derive(Deserialize)]
struct ApiLogprobs {
    #[serde(default)]
    content: Option<Vec<ApiTokenLogprob>>,
}

#[derive(Deserialize)]
struct ApiTokenLogprob {
    logprob: f64,
}

fn parse_response(body: &str, expected_n: usize) -> Result<Vec<Generation>> {
    let parsed: ApiResponse = serde_json::from_str(body)
        .map_err(|e| Error::Protocol(format!("malformed chat-completions response: {e}")))?;
    if parsed.choices.len() != expected_n {
        return Err(Error::Protocol(format!(
            "server returned {} choices, expected {expected_n}",
            parsed.choices.len()
        )));
    }
    Ok(parsed
        .choices
        .into_iter()
        .map(|choice| Generation {
            text: choice.message.content,
            token_logprobs: choice
                .logprobs
                .and_then(|lp| lp.content)
                .map(|tokens| tokens.into_iter().map(|t| t.logprob).collect()),
        })
        .collect())
}

impl Backend for HttpBackend {
    fn name(&self) -> &str {
        &self.config.model_name
    }

    fn complete_chat(
        &self,
        messages: &[ChatMessage],
        params: &SamplingParams,
    ) -> Result<Vec<Generation>> {
        if messages.is_empty() {
            return Err(Error::Protocol("complete_chat with no messages".into()));
        }
        let url = self.url();
        let bearer = self.bearer();
        let body = self.request_body(messages, params);
        let max_attempts = self.config.retry.max_attempts.max(1);
        let mut last_failure = String::new();

        for attempt in 1..=max_attempts {
            let outcome = {
                let _permit = self.inflight.acquire();
                self.transport.post_json(&url, bearer.as_deref(), &body)
            };
            match outcome {
                Ok((status, text)) if (200..300).contains(&status) => {
                    return parse_response(&text, params.n as usize);
                }
                Ok((status, text)) if retryable(status) => {
                    last_failure = format!("status {status}: {}", truncate(&text, 200));
                }
                Ok((status, text)) => {
                    return Err(Error::Backend {
                        message: format!(
                            "non-retryable status {status}: {}",
                            truncate(&text, 200)
                        ),
                        attempts: attempt,
                    });
                }
                Err(transport_error) => {
                    last_failure = format!("transport: {transport_error}");
                }
            }
            if attempt < max_attempts {
                std::thread::sleep(self.backoff(attempt));
            }
        }
        Err(Error::Backend {
            message: last_failure,
            attempts: max_attempts,
        })
    }
}

fn truncate(text: &str, limit: usize) -> String {
    if text.len() <= limit {
        text.to_string()
    } else {
        let mut end = limit;
        while !text.is_char_boundary(end) {
            end -= 1;
        }
        format!("{}...", &text[..end])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Mutex;

    /// Scripted transport: pops one canned outcome per request and counts
    /// every request it sees.
    struct MockTransport {
        outcomes: Mutex<Vec<std::result::Result<(u16, String), String>>>,
        requests: AtomicUsize,
    }

    impl MockTransport {
        fn new(mut outcomes: Vec<std::result::Result<(u16, String), String>>) -> Self {
            outcomes.reverse();
            MockTransport {
                outcomes: Mutex::new(outcomes),
                requests: AtomicUsize::new(0),
            }
        }
    }

    impl Transport for MockTransport {
        fn post_json(
            &self,
            _url: &str,
            _bearer: Option<&str>,
            _body: &serde_json::Value,
        ) -> std::result::Result<(u16, String), String> {
            self.requests.fetch_add(1, Ordering::SeqCst);
            self.outcomes
                .lock()
                .unwrap()
                .pop()
                .unwrap_or(Err("mock exhausted".to_string()))
        }
    }

    fn ok_body(texts: &[&str]) -> String {
        let choices: Vec<serde_json::Value> = texts
            .iter()
            .map(|t| json!({"message": {"role": "assistant", "content": t}}))
            .collect();
        json!({ "choices": choices }).to_string()
    }

    fn backend_with(
        outcomes: Vec<std::result::Result<(u16, String), String>>,
    ) -> (HttpBackend, std::sync::Arc<MockTransport>) {
        let transport = std::sync::Arc::new(MockTransport::new(outcomes));
        let config = HttpBackendConfig {
            model_name: "m".into(),
            endpoint_url: "http://example.invalid".into(),
            retry: RetryPolicy {
                max_attempts: 3,
                base_backoff_ms: 1,
            },
            ..HttpBackendConfig::default()
        };
        struct Shared(std::sync::Arc<MockTransport>);
        impl Transport for Shared {
            fn post_json(
                &self,
                url: &str,
                bearer: Option<&str>,
                body: &serde_json::Value,
            ) -> std::result::Result<(u16, String), String> {
                self.0.post_json(url, bearer, body)
            }
        }
        let backend =
            HttpBackend::with_transport(config, Box::new(Shared(std::sync::Arc::clone(&transport))));
        (backend, transport)
    }

    #[test]
    fn success_parses_all_choices() {
        let (backend, transport) = backend_with(vec![Ok((200, ok_body(&["a", "b"])))]);
        let out = backend
            .complete_chat(
                &[ChatMessage::user("p")],
                &SamplingParams::default().with_n(2),
            )
            .unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].text, "a");
        assert_eq!(transport.requests.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn retries_transport_and_429_then_succeeds() {
        let (backend, transport) = backend_with(vec![
            Err("connection refused".into()),
            Ok((429, "slow down".into())),
            Ok((200, ok_body(&["fine"]))),
        ]);
        let out = backend
            .complete_chat(&[ChatMessage::user("p")], &SamplingParams::default())
            .unwrap();
        assert_eq!(out[0].text, "fine");
        assert_eq!(transport.requests.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn non_retryable_status_fails_immediately() {
        let (backend, transport) = backend_with(vec![Ok((400, "bad request".into()))]);
        let err = backend
            .complete_chat(&[ChatMessage::user("p")], &SamplingParams::default())
            .unwrap_err();
        match err {
            Error::Backend { attempts, .. } => assert_eq!(attempts, 1),
            other => panic!("unexpected error: {other}"),
        }
        assert_eq!(transport.requests.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn exhausted_retries_carry_attempt_count() {
        let (backend, transport) = backend_with(vec![
            Ok((500, "boom".into())),
            Ok((503, "boom".into())),
            Ok((500, "boom".into())),
        ]);
        let err = backend
            .complete_chat(&[ChatMessage::user("p")], &SamplingParams::default())
            .unwrap_err();
        match err {
            Error::Backend { attempts, .. } => assert_eq!(attempts, 3),
            other => panic!("unexpected error: {other}"),
        }
        assert_eq!(transport.requests.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn malformed_body_is_protocol_error() {
        let (backend, _) = backend_with(vec![Ok((200, "not json".into()))]);
        let err = backend
            .complete_chat(&[ChatMessage::user("p")], &SamplingParams::default())
            .unwrap_err();
        assert!(matches!(err, Error::Protocol(_)));
    }

    #[test]
    fn wrong_choice_count_is_protocol_error() {
        let (backend, _) = backend_with(vec![Ok((200, ok_body(&["only one"])))]);
        let err = backend
            .complete_chat(
                &[ChatMessage::user("p")],
                &SamplingParams::default().with_n(2),
            )
            .unwrap_err();
        assert!(matches!(err, Error::Protocol(_)));
    }

    #[test]
    fn token_logprobs_are_parsed_when_present() {
        let body = json!({
            "choices": [{
                "message": {"role": "assistant", "content": "hi"},
                "logprobs": {"content": [{"token": "h", "logprob": -0.1}, {"token": "i", "logprob": -0.2}]}
            }]
        })
        .to_string();
        let out = parse_response(&body, 1).unwrap();
        assert_eq!(out[0].token_logprobs, Some(vec![-0.1, -0.2]));
    }

    #[test]
    fn url_joins_endpoint_base() {
        let config = HttpBackendConfig {
            model_name: "m".into(),
            endpoint_url: "http://host:8000/".into(),
            ..HttpBackendConfig::default()
        };
        let backend = HttpBackend::with_transport(config, Box::new(MockTransport::new(vec![])));
        assert_eq!(backend.url(), "http://host:8000/v1/chat/completions");

        let config = HttpBackendConfig {
            model_name: "m".into(),
            endpoint_url: "http://host:8000/v1/chat/completions".into(),
            ..HttpBackendConfig::default()
        };
        let backend = HttpBackend::with_transport(config, Box::new(MockTransport::new(vec![])));
        assert_eq!(backend.url(), "http://host:8000/v1/chat/completions");
    }
}
