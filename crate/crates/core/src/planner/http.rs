//! Chat-completion style HTTP backend.
//!
//! Requests use the widely supported `messages` shape. Responses are accepted
//! in OpenAI (`choices[0].message.content`), Anthropic (`content[0].text`) and
//! Hugging Face (`generated_text`) forms.

use std::time::Duration;

use reqwest::blocking::Client;
use serde_json::{json, Value};
use tracing::warn;

use super::backend::{BackendError, PlannerBackend};
use super::context::{PromptContext, SYSTEM_PROMPT};

pub const ENV_ENDPOINT: &str = "DISCHARGE_LLM_ENDPOINT";
pub const ENV_API_KEY: &str = "DISCHARGE_LLM_API_KEY";
pub const ENV_MODEL: &str = "DISCHARGE_LLM_MODEL";

#[derive(Debug, Clone)]
pub struct HttpBackendConfig {
    pub endpoint: String,
    pub api_key: Option<String>,
    pub model: String,
    pub timeout: Duration,
    pub max_retries: u32,
    pub backoff_base: Duration,
    /// Forwarded as `X-Context-Cache-Key` so providers with prompt caching can use it.
    pub send_cache_hint: bool,
}

impl HttpBackendConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            api_key: None,
            model: "gpt-4o-mini".into(),
            timeout: Duration::from_secs(60),
            max_retries: 2,
            backoff_base: Duration::from_secs(1),
            send_cache_hint: false,
        }
    }

    /// Reads endpoint, key and model from the environment. `None` without an endpoint.
    pub fn from_env() -> Option<Self> {
        let endpoint = std::env::var(ENV_ENDPOINT).ok().filter(|s| !s.is_empty())?;
        let mut cfg = Self::new(endpoint);
        cfg.api_key = std::env::var(ENV_API_KEY).ok().filter(|s| !s.is_empty());
        if let Ok(model) = std::env::var(ENV_MODEL) {
            if !model.is_empty() {
                cfg.model = model;
            }
        }
        Some(cfg)
    }
}

pub fn backend_configured() -> bool {
    HttpBackendConfig::from_env().is_some()
}

#[derive(Debug)]
pub struct HttpBackend {
    id: String,
    cfg: HttpBackendConfig,
    http: Client,
}

impl HttpBackend {
    pub fn new(cfg: HttpBackendConfig) -> Result<Self, BackendError> {
        let http = Client::builder()
            .timeout(cfg.timeout)
            .build()
            .map_err(|e| BackendError::Failed { attempts: 0, message: e.to_string() })?;
        Ok(Self { id: format!("http:{}", cfg.model), cfg, http })
    }

    pub fn request_body(&self, context: &PromptContext) -> Value {
        json!({
            "model": self.cfg.model,
            "temperature": 0,
            "messages": [
                {"role": "system", "content": SYSTEM_PROMPT},
                {"role": "user", "content": context.user_prompt()},
            ],
        })
    }

    fn attempt(&self, context: &PromptContext, body: &Value) -> Result<String, Attempt> {
        let mut req = self.http.post(&self.cfg.endpoint).json(body);
        if let Some(key) = &self.cfg.api_key {
            req = req.bearer_auth(key);
        }
        if self.cfg.send_cache_hint {
            req = req.header("X-Context-Cache-Key", &context.cache_key);
        }
        let resp = req.send().map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = resp.status().as_u16();
        match status {
            401 | 403 => return Err(Attempt::Fatal(BackendError::Auth(status))),
            429 | 500..=599 => return Err(Attempt::Retry(format!("HTTP {status}"))),
            200..=299 => {}
            _ => {
                let body = resp.text().unwrap_or_default();
                return Err(Attempt::Fatal(BackendError::Failed {
                    attempts: 1,
                    message: format!("HTTP {status}: {}", body.chars().take(256).collect::<String>()),
                }));
            }
        }
        let value: Value = resp
            .json()
            .map_err(|e| Attempt::Fatal(BackendError::InvalidResponse(e.to_string())))?;
        completion_text(&value)
            .map(str::to_string)
            .ok_or_else(|| Attempt::Fatal(BackendError::InvalidResponse("no completion text".into())))
    }
}

enum Attempt {
    Retry(String),
    Fatal(BackendError),
}

/// First completion text in any of the supported response shapes.
pub fn completion_text(v: &Value) -> Option<&str> {
    [
        "/choices/0/message/content",
        "/choices/0/text",
        "/content/0/text",
        "/generated_text",
        "/0/generated_text",
    ]
    .iter()
    .find_map(|p| v.pointer(p).and_then(Value::as_str))
}

impl PlannerBackend for HttpBackend {
    fn backend_id(&self) -> &str {
        &self.id
    }

    fn generate(&self, context: &PromptContext) -> Result<String, BackendError> {
        let body = self.request_body(context);
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.attempt(context, &body) {
                Ok(text) => return Ok(text),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(message)) => {
                    if attempts > self.cfg.max_retries {
                        return Err(BackendError::Failed { attempts, message });
                    }
                    let delay = self.cfg.backoff_base * 2u32.pow(attempts - 1);
                    warn!(attempts, ?delay, "planner backend error, retrying: {message}");
                    std::thread::sleep(delay);
                }
            }
        }
    }
}
