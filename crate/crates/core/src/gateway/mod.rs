//! Every model call goes through [`Gateway::complete`]: mimic rules,
//! record/replay and the configured provider, with usage accounting.

mod mimic;
mod provider;
mod savings;
mod store;

use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use mimic::{load_profile, CallIndexMatch, MimicRule, RuleMatch};
pub use provider::{CountingProvider, HttpProvider, MockProvider, Provider};
pub use savings::{usage_from_trace, Savings};
pub use store::{Record, RecordStore};

use crate::value::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn new(role: Role, content: impl Into<String>) -> Message {
        Message {
            role,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmParams {
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

fn default_max_tokens() -> u32 {
    256
}

impl Default for LlmParams {
    fn default() -> Self {
        LlmParams {
            temperature: 0.0,
            max_tokens: default_max_tokens(),
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Origin {
    pub session: String,
    pub node: String,
    pub call_index: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmRequest {
    pub model: String,
    pub messages: Vec<Message>,
    #[serde(default)]
    pub params: LlmParams,
    #[serde(default)]
    pub origin: Origin,
}

impl LlmRequest {
    pub fn last_user_message(&self) -> Option<&str> {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
    }

    /// Stable hash of model, messages and params (seed excluded).
    pub fn fingerprint(&self) -> String {
        let messages = self
            .messages
            .iter()
            .map(|m| {
                Value::object([
                    ("role", Value::from(role_name(m.role))),
                    ("content", Value::from(m.content.as_str())),
                ])
            })
            .collect::<Vec<_>>();
        let params = Value::object([
            ("temperature", Value::number(self.params.temperature).unwrap_or(Value::Null)),
            ("max_tokens", Value::from(i64::from(self.params.max_tokens))),
        ]);
        let key = Value::object([
            ("model", Value::from(self.model.as_str())),
            ("messages", Value::from(messages)),
            ("params", params),
        ]);
        hex::encode(Sha256::digest(key.to_canonical_json().as_bytes()))
    }

    /// Whitespace-token count of all message contents.
    pub fn prompt_token_count(&self) -> u64 {
        self.messages.iter().map(|m| count_tokens(&m.content)).sum()
    }
}

fn role_name(role: Role) -> &'static str {
    match role {
        Role::System => "system",
        Role::User => "user",
        Role::Assistant => "assistant",
    }
}

/// The counting rule for Mimic, Replay and Mock answers: fragments after
/// splitting on Unicode whitespace.
pub fn count_tokens(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl TokenUsage {
    pub fn total(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "id")]
pub enum ResponseSource {
    Live,
    Mimic(String),
    Replay(String),
    Mock,
}

impl ResponseSource {
    /// True when the answer cost live traffic (Mock stands in for live).
    pub fn is_live(&self) -> bool {
        matches!(self, ResponseSource::Live | ResponseSource::Mock)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmResponse {
    pub content: String,
    pub usage: TokenUsage,
    pub source: ResponseSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GatewayMode {
    Live,
    Record,
    Replay,
    MimicFirst,
    Mock,
}

impl fmt::Display for GatewayMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GatewayMode::Live => "live",
            GatewayMode::Record => "record",
            GatewayMode::Replay => "replay",
            GatewayMode::MimicFirst => "mimic-first",
            GatewayMode::Mock => "mock",
        })
    }
}

impl FromStr for GatewayMode {
    type Err = GatewayError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "live" => GatewayMode::Live,
            "record" => GatewayMode::Record,
            "replay" => GatewayMode::Replay,
            "mimic-first" => GatewayMode::MimicFirst,
            "mock" => GatewayMode::Mock,
            other => return Err(GatewayError::InvalidRequest(format!("unknown mode `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GatewayError {
    #[error("no recorded response for fingerprint {fingerprint}")]
    ReplayMiss { fingerprint: String },
    #[error("provider returned {status}: {body}")]
    ProviderError { status: u16, body: String },
    #[error("provider timed out")]
    Timeout,
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("record store: {0}")]
    Store(String),
}

impl GatewayError {
    pub fn code(&self) -> &'static str {
        match self {
            GatewayError::ReplayMiss { .. } => "ReplayMiss",
            GatewayError::ProviderError { .. } => "ProviderError",
            GatewayError::Timeout => "Timeout",
            GatewayError::InvalidRequest(_) => "InvalidRequest",
            GatewayError::Store(_) => "Store",
        }
    }
}

/// Per-session accounting. Live and Mock answers count as live calls;
/// Mimic and Replay answers add to `saved_tokens` instead.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct UsageTotals {
    pub live_calls: u64,
    pub mimic_calls: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub saved_tokens: u64,
}

impl UsageTotals {
    pub fn add(&mut self, response: &LlmResponse) {
        if response.source.is_live() {
            self.live_calls += 1;
            self.prompt_tokens += response.usage.prompt_tokens;
            self.completion_tokens += response.usage.completion_tokens;
        } else {
            self.mimic_calls += 1;
            self.saved_tokens += response.usage.total();
        }
    }

    pub fn merge(&mut self, other: &UsageTotals) {
        self.live_calls += other.live_calls;
        self.mimic_calls += other.mimic_calls;
        self.prompt_tokens += other.prompt_tokens;
        self.completion_tokens += other.completion_tokens;
        self.saved_tokens += other.saved_tokens;
    }

    pub fn live_tokens(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }
}

pub struct Gateway {
    provider: Arc<dyn Provider>,
    mode: RwLock<GatewayMode>,
    rules: RwLock<Vec<MimicRule>>,
    store: RwLock<RecordStore>,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway")
            .field("provider", &self.provider.name())
            .field("mode", &self.mode())
            .finish_non_exhaustive()
    }
}

impl Gateway {
    pub fn new(provider: Arc<dyn Provider>, mode: GatewayMode) -> Gateway {
        Gateway {
            provider,
            mode: RwLock::new(mode),
            rules: RwLock::new(Vec::new()),
            store: RwLock::new(RecordStore::default()),
        }
    }

    /// A gateway answering from the deterministic mock provider.
    pub fn mock(seed: u64) -> Gateway {
        Gateway::new(Arc::new(MockProvider::new(seed)), GatewayMode::Mock)
    }

    pub fn with_store(self, store: RecordStore) -> Gateway {
        *self.store.write().expect("store lock") = store;
        self
    }

    pub fn with_rules(self, rules: Vec<MimicRule>) -> Gateway {
        *self.rules.write().expect("rules lock") = rules;
        self
    }

    pub fn mode(&self) -> GatewayMode {
        *self.mode.read().expect("mode lock")
    }

    pub fn set_mode(&self, mode: GatewayMode) {
        *self.mode.write().expect("mode lock") = mode;
    }

    pub fn rules(&self) -> Vec<MimicRule> {
        self.rules.read().expect("rules lock").clone()
    }

    pub fn add_rule(&self, rule: MimicRule) {
        let mut rules = self.rules.write().expect("rules lock");
        rules.retain(|r| r.id != rule.id);
        rules.push(rule);
    }

    pub fn clear_rules(&self) {
        self.rules.write().expect("rules lock").clear();
    }

    pub fn store_snapshot(&self) -> RecordStore {
        self.store.read().expect("store lock").clone()
    }

    pub fn record_count(&self) -> usize {
        self.store.read().expect("store lock").len()
    }

    pub fn complete(
        &self,
        request: &LlmRequest,
        session_rules: &[MimicRule],
    ) -> Result<LlmResponse, GatewayError> {
        self.complete_with_mode(request, self.mode(), session_rules)
    }

    /// `session_rules` are consulted before the gateway-wide rules.
    pub fn complete_with_mode(
        &self,
        request: &LlmRequest,
        mode: GatewayMode,
        session_rules: &[MimicRule],
    ) -> Result<LlmResponse, GatewayError> {
        if request.messages.is_empty() {
            return Err(GatewayError::InvalidRequest("messages must not be empty".into()));
        }
        match mode {
            GatewayMode::Live | GatewayMode::Mock => self.provider.complete(request),
            GatewayMode::Record => self.call_and_record(request),
            GatewayMode::Replay => self.replay(request),
            GatewayMode::MimicFirst => {
                if let Some(answer) = self.mimic(request, session_rules) {
                    return Ok(answer);
                }
                match self.replay(request) {
                    Ok(answer) => Ok(answer),
                    Err(GatewayError::ReplayMiss { .. }) => self.call_and_record(request),
                    Err(e) => Err(e),
                }
            }
        }
    }

    fn mimic(&self, request: &LlmRequest, session_rules: &[MimicRule]) -> Option<LlmResponse> {
        let global = self.rules.read().expect("rules lock");
        let rule = session_rules
            .iter()
            .chain(global.iter())
            .find(|r| r.matches(request))?;
        Some(LlmResponse {
            usage: TokenUsage {
                prompt_tokens: request.prompt_token_count(),
                completion_tokens: count_tokens(&rule.response),
            },
            content: rule.response.clone(),
            source: ResponseSource::Mimic(rule.id.clone()),
        })
    }

    fn replay(&self, request: &LlmRequest) -> Result<LlmResponse, GatewayError> {
        let fingerprint = request.fingerprint();
        let store = self.store.read().expect("store lock");
        let record = store
            .get(&fingerprint)
            .ok_or(GatewayError::ReplayMiss {
                fingerprint: fingerprint.clone(),
            })?;
        let content = record.response.content.clone();
        Ok(LlmResponse {
            usage: TokenUsage {
                prompt_tokens: request.prompt_token_count(),
                completion_tokens: count_tokens(&content),
            },
            content,
            source: ResponseSource::Replay(fingerprint),
        })
    }

    fn call_and_record(&self, request: &LlmRequest) -> Result<LlmResponse, GatewayError> {
        let response = self.provider.complete(request)?;
        self.store
            .write()
            .expect("store lock")
            .insert(Record {
                fingerprint: request.fingerprint(),
                request: request.clone(),
                response: response.clone(),
            })
            .map_err(|e| GatewayError::Store(e.to_string()))?;
        Ok(response)
    }
}
