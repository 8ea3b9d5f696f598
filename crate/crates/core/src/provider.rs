//! Chat-completion providers: the HTTP client for deployed services and a
//! scripted double for deterministic runs.

use std::path::Path;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Message { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Message { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Message { role: Role::Assistant, content: content.into() }
    }
}

/// Operator names used to tag requests; scripted rules match on them.
pub mod task {
    pub const REFORMULATE: &str = "reformulate";
    pub const CLASSIFY_INTENTS: &str = "classify_intents";
    pub const LINK_SCHEMA: &str = "link_schema";
    pub const PLAN: &str = "plan";
    pub const GENERATE_SQL: &str = "generate_sql";
    pub const SUMMARIZE: &str = "summarize";
    pub const EXTRACT_INSTRUCTIONS: &str = "extract_instructions";
    pub const FEEDBACK_TARGETS: &str = "feedback_targets";
    pub const FEEDBACK_EXPAND: &str = "feedback_expand";
    pub const EDIT_PLAN: &str = "edit_plan";
    pub const EDIT_GENERATE: &str = "edit_generate";
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderRequest {
    /// Which operator is calling; not sent over the wire.
    pub task: String,
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl ProviderRequest {
    pub fn new(task: &str, messages: Vec<Message>) -> Self {
        ProviderRequest {
            task: task.to_string(),
            messages,
            temperature: 0.0,
            max_tokens: 2048,
        }
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    /// All message contents joined, used for rule matching.
    pub fn transcript(&self) -> String {
        self.messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderResponse {
    pub text: String,
    pub finish_reason: String,
    pub usage: TokenUsage,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProviderError {
    #[error("provider unavailable: {0}")]
    Unavailable(String),
    #[error("provider returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("malformed provider response: {0}")]
    Malformed(String),
    #[error("no scripted response for task `{task}`")]
    NoScriptMatch { task: String },
}

pub trait ChatProvider: Send + Sync {
    fn complete(&self, request: &ProviderRequest) -> Result<ProviderResponse, ProviderError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScriptMode {
    /// Unmatched requests are errors.
    #[default]
    Strict,
    /// Unmatched requests get an empty response; operators apply their own
    /// fallbacks.
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptRule {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<String>,
    /// Every string must occur in the request transcript.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub contains: Vec<String>,
    /// None of these may occur.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub absent: Vec<String>,
    /// Number of uses before the rule is spent; unlimited when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub times: Option<u32>,
    pub response: String,
}

impl ScriptRule {
    pub fn new(task: &str, response: impl Into<String>) -> Self {
        ScriptRule {
            task: Some(task.to_string()),
            contains: Vec::new(),
            absent: Vec::new(),
            times: None,
            response: response.into(),
        }
    }

    pub fn containing(mut self, needle: impl Into<String>) -> Self {
        self.contains.push(needle.into());
        self
    }

    pub fn without(mut self, needle: impl Into<String>) -> Self {
        self.absent.push(needle.into());
        self
    }

    pub fn times(mut self, n: u32) -> Self {
        self.times = Some(n);
        self
    }

    fn matches(&self, request: &ProviderRequest, transcript: &str) -> bool {
        self.task.as_deref().is_none_or(|t| t == request.task)
            && self.contains.iter().all(|c| transcript.contains(c.as_str()))
            && !self.absent.iter().any(|c| transcript.contains(c.as_str()))
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Script {
    #[serde(default)]
    pub mode: ScriptMode,
    #[serde(default)]
    pub rules: Vec<ScriptRule>,
}

impl Script {
    pub fn load(path: &Path) -> Result<Script, ProviderError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ProviderError::Unavailable(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| ProviderError::Malformed(format!("{}: {e}", path.display())))
    }
}

/// Test double answering from an ordered rule list: the first rule that
/// matches and is not spent wins.
pub struct ScriptedProvider {
    script: Script,
    state: Mutex<ScriptState>,
}

#[derive(Default)]
struct ScriptState {
    used: Vec<u32>,
    calls: Vec<ProviderRequest>,
}

impl ScriptedProvider {
    pub fn new(script: Script) -> Self {
        let used = vec![0; script.rules.len()];
        ScriptedProvider {
            script,
            state: Mutex::new(ScriptState { used, calls: Vec::new() }),
        }
    }

    pub fn strict(rules: Vec<ScriptRule>) -> Self {
        Self::new(Script { mode: ScriptMode::Strict, rules })
    }

    pub fn fallback(rules: Vec<ScriptRule>) -> Self {
        Self::new(Script { mode: ScriptMode::Fallback, rules })
    }

    pub fn from_file(path: &Path) -> Result<Self, ProviderError> {
        Ok(Self::new(Script::load(path)?))
    }

    /// Every request seen so far, in call order.
    pub fn calls(&self) -> Vec<ProviderRequest> {
        self.lock().calls.clone()
    }

    pub fn calls_for(&self, task: &str) -> Vec<ProviderRequest> {
        self.lock().calls.iter().filter(|c| c.task == task).cloned().collect()
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, ScriptState> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }
}

fn word_count(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

impl ChatProvider for ScriptedProvider {
    fn complete(&self, request: &ProviderRequest) -> Result<ProviderResponse, ProviderError> {
        let transcript = request.transcript();
        let mut state = self.lock();
        state.calls.push(request.clone());
        let hit = self.script.rules.iter().enumerate().find(|(i, rule)| {
            rule.times.is_none_or(|t| state.used[*i] < t) && rule.matches(request, &transcript)
        });
        let text = match hit {
            Some((i, rule)) => {
                state.used[i] += 1;
                rule.response.clone()
            }
            None if self.script.mode == ScriptMode::Fallback => String::new(),
            None => {
                return Err(ProviderError::NoScriptMatch { task: request.task.clone() });
            }
        };
        Ok(ProviderResponse {
            usage: TokenUsage {
                prompt_tokens: word_count(&transcript),
                completion_tokens: word_count(&text),
            },
            text,
            finish_reason: "stop".into(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpProviderConfig {
    pub base_url: String,
    pub model: String,
    #[serde(default, skip_serializing)]
    pub api_key: Option<String>,
    #[serde(default = "default_concurrency")]
    pub max_concurrency: usize,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_concurrency() -> usize {
    4
}

fn default_timeout() -> u64 {
    120
}

impl HttpProviderConfig {
    /// Reads `GENEDIT_PROVIDER_URL`, `GENEDIT_PROVIDER_KEY` and
    /// `GENEDIT_MODEL`.
    pub fn from_env() -> Option<Self> {
        let base_url = std::env::var("GENEDIT_PROVIDER_URL").ok()?;
        Some(HttpProviderConfig {
            base_url,
            model: std::env::var("GENEDIT_MODEL").unwrap_or_else(|_| "gpt-4o".into()),
            api_key: std::env::var("GENEDIT_PROVIDER_KEY").ok(),
            max_concurrency: default_concurrency(),
            timeout_secs: default_timeout(),
        })
    }
}

/// Counting semaphore bounding outstanding requests.
struct Permits {
    free: Mutex<usize>,
    freed: Condvar,
}

impl Permits {
    fn acquire(&self) -> PermitGuard<'_> {
        let mut free = self.free.lock().unwrap_or_else(|p| p.into_inner());
        while *free == 0 {
            free = self.freed.wait(free).unwrap_or_else(|p| p.into_inner());
        }
        *free -= 1;
        PermitGuard(self)
    }
}

struct PermitGuard<'a>(&'a Permits);

impl Drop for PermitGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|p| p.into_inner()) += 1;
        self.0.freed.notify_one();
    }
}

/// Client for `POST {base_url}/v1/chat/completions`.
pub struct HttpProvider {
    config: HttpProviderConfig,
    client: reqwest::blocking::Client,
    permits: Permits,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: &'a [Message],
    temperature: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<TokenUsage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct WireMessage {
    #[serde(default)]
    content: Option<String>,
}

impl HttpProvider {
    pub fn new(config: HttpProviderConfig) -> Result<Self, ProviderError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| ProviderError::Unavailable(e.to_string()))?;
        let permits = Permits {
            free: Mutex::new(config.max_concurrency.max(1)),
            freed: Condvar::new(),
        };
        Ok(HttpProvider { config, client, permits })
    }

    fn endpoint(&self) -> String {
        format!("{}/v1/chat/completions", self.config.base_url.trim_end_matches('/'))
    }
}

impl ChatProvider for HttpProvider {
    fn complete(&self, request: &ProviderRequest) -> Result<ProviderResponse, ProviderError> {
        let _permit = self.permits.acquire();
        let body = WireRequest {
            model: &self.config.model,
            messages: &request.messages,
            temperature: request.temperature,
            max_tokens: request.max_tokens,
        };
        let mut call = self.client.post(self.endpoint()).json(&body);
        if let Some(key) = &self.config.api_key {
            call = call.bearer_auth(key);
        }
        let response = call.send().map_err(|e| ProviderError::Unavailable(e.to_string()))?;
        let status = response.status();
        let text = response.text().map_err(|e| ProviderError::Unavailable(e.to_string()))?;
        if !status.is_success() {
            let body: String = text.chars().take(500).collect();
            return if status.is_server_error() {
                Err(ProviderError::Unavailable(format!("HTTP {}: {body}", status.as_u16())))
            } else {
                Err(ProviderError::Http { status: status.as_u16(), body })
            };
        }
        let wire: WireResponse =
            serde_json::from_str(&text).map_err(|e| ProviderError::Malformed(e.to_string()))?;
        let choice = wire
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| ProviderError::Malformed("no choices".into()))?;
        Ok(ProviderResponse {
            text: choice.message.content.unwrap_or_default(),
            finish_reason: choice.finish_reason.unwrap_or_else(|| "stop".into()),
            usage: wire.usage.unwrap_or_default(),
        })
    }
}

/// Sends one request and returns only the text.
pub fn ask(
    provider: &dyn ChatProvider,
    task: &str,
    system: &str,
    user: String,
) -> Result<String, ProviderError> {
    let request = ProviderRequest::new(task, vec![Message::system(system), Message::user(user)]);
    provider.complete(&request).map(|r| r.text)
}
