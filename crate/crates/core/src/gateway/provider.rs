use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use sha2::{Digest, Sha256};

use super::{count_tokens, GatewayError, LlmRequest, LlmResponse, ResponseSource, Role, TokenUsage};

/// Something that answers chat completions over the wire (or pretends to).
pub trait Provider: Send + Sync {
    fn name(&self) -> &str;
    fn complete(&self, request: &LlmRequest) -> Result<LlmResponse, GatewayError>;
}

/// Deterministic stand-in for a live model.
#[derive(Debug, Clone)]
pub struct MockProvider {
    seed: u64,
}

impl MockProvider {
    pub fn new(seed: u64) -> MockProvider {
        MockProvider { seed }
    }

    pub fn content_for(&self, request: &LlmRequest) -> String {
        let mut hasher = Sha256::new();
        for m in &request.messages {
            hasher.update(format!("{:?}", m.role).as_bytes());
            hasher.update([0]);
            hasher.update(m.content.as_bytes());
            hasher.update([0]);
        }
        hasher.update(self.seed.to_le_bytes());
        let digest = hex::encode(hasher.finalize());
        let user_tokens: Vec<&str> = request
            .messages
            .iter()
            .filter(|m| m.role == Role::User)
            .flat_map(|m| m.content.split_whitespace())
            .collect();
        let tail = &user_tokens[user_tokens.len().saturating_sub(8)..];
        let mut content = format!("mock({})", &digest[..16]);
        if !tail.is_empty() {
            content.push(' ');
            content.push_str(&tail.join(" "));
        }
        content
    }
}

impl Provider for MockProvider {
    fn name(&self) -> &str {
        "mock"
    }

    fn complete(&self, request: &LlmRequest) -> Result<LlmResponse, GatewayError> {
        let content = self.content_for(request);
        Ok(LlmResponse {
            usage: TokenUsage {
                prompt_tokens: request.prompt_token_count(),
                completion_tokens: count_tokens(&content),
            },
            content,
            source: ResponseSource::Mock,
        })
    }
}

/// Chat-completions client over HTTP/JSON.
#[derive(Debug, Clone)]
pub struct HttpProvider {
    base_url: String,
    api_key: Option<String>,
    timeout: Duration,
}

impl HttpProvider {
    pub const API_KEY_VAR: &'static str = "AAD_API_KEY";

    pub fn new(base_url: impl Into<String>, api_key: Option<String>) -> HttpProvider {
        HttpProvider {
            base_url: base_url.into(),
            api_key,
            timeout: Duration::from_secs(60),
        }
    }

    /// Reads the key from `AAD_API_KEY`.
    pub fn from_env(base_url: impl Into<String>) -> HttpProvider {
        HttpProvider::new(base_url, std::env::var(Self::API_KEY_VAR).ok())
    }

    pub fn with_timeout(mut self, timeout: Duration) -> HttpProvider {
        self.timeout = timeout;
        self
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.base_url.trim_end_matches('/'))
    }
}

impl Provider for HttpProvider {
    fn name(&self) -> &str {
        "http"
    }

    fn complete(&self, request: &LlmRequest) -> Result<LlmResponse, GatewayError> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(self.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let mut body = serde_json::json!({
            "model": request.model,
            "messages": request.messages,
            "temperature": request.params.temperature,
            "max_tokens": request.params.max_tokens,
        });
        if let Some(seed) = request.params.seed {
            body["seed"] = seed.into();
        }
        let mut call = agent.post(&self.endpoint());
        if let Some(key) = &self.api_key {
            call = call.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = call.send_json(&body).map_err(|e| match e {
            ureq::Error::Timeout(_) => GatewayError::Timeout,
            other => GatewayError::ProviderError {
                status: 0,
                body: other.to_string(),
            },
        })?;
        let status = response.status().as_u16();
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| GatewayError::ProviderError {
                status,
                body: e.to_string(),
            })?;
        if !(200..300).contains(&status) {
            return Err(GatewayError::ProviderError {
                status,
                body: text.chars().take(200).collect(),
            });
        }
        let json: serde_json::Value = serde_json::from_str(&text).map_err(|e| {
            GatewayError::ProviderError {
                status,
                body: format!("unparseable body: {e}"),
            }
        })?;
        let content = json["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| GatewayError::ProviderError {
                status,
                body: "response has no choices[0].message.content".into(),
            })?
            .to_string();
        let usage = TokenUsage {
            prompt_tokens: json["usage"]["prompt_tokens"].as_u64().unwrap_or(0),
            completion_tokens: json["usage"]["completion_tokens"].as_u64().unwrap_or(0),
        };
        Ok(LlmResponse {
            content,
            usage,
            source: ResponseSource::Live,
        })
    }
}

/// Wraps a provider and counts the traffic that reaches it.
pub struct CountingProvider {
    inner: Arc<dyn Provider>,
    calls: AtomicU64,
    bytes: AtomicU64,
}

impl CountingProvider {
    pub fn new(inner: Arc<dyn Provider>) -> CountingProvider {
        CountingProvider {
            inner,
            calls: AtomicU64::new(0),
            bytes: AtomicU64::new(0),
        }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    /// Request plus response payload bytes seen.
    pub fn bytes(&self) -> u64 {
        self.bytes.load(Ordering::SeqCst)
    }
}

impl Provider for CountingProvider {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn complete(&self, request: &LlmRequest) -> Result<LlmResponse, GatewayError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let sent = serde_json::to_vec(request).map(|v| v.len()).unwrap_or(0) as u64;
        let response = self.inner.complete(request)?;
        self.bytes
            .fetch_add(sent + response.content.len() as u64, Ordering::SeqCst);
        Ok(response)
    }
}
