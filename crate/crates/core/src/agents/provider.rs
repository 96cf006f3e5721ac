//! Chat-completion providers: a real HTTP client, a replaying fake for tests,
//! and wrappers for recording and limiting concurrency.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> ChatMessage {
        ChatMessage { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> ChatMessage {
        ChatMessage { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> ChatMessage {
        ChatMessage { role: Role::Assistant, content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Distinguishes otherwise identical requests, e.g. parallel samples.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl ChatRequest {
    /// Stable key used to look up recorded replies.
    pub fn key(&self) -> String {
        let json = serde_json::to_string(self).expect("request serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    /// All message contents joined; what scripted rules match against.
    pub fn text(&self) -> String {
        self.messages.iter().map(|m| m.content.as_str()).collect::<Vec<_>>().join("\n")
    }
}

#[derive(Debug, Clone, PartialEq, Error, Serialize, Deserialize)]
pub enum ProviderError {
    #[error("http request failed: {0}")]
    Http(String),
    #[error("endpoint returned status {code}: {body}")]
    Status { code: u16, body: String },
    #[error("no scripted reply for request {key}")]
    MissingReply { key: String },
    #[error("provider configuration: {0}")]
    Config(String),
    #[error("transcript i/o: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Http,
    Scripted,
}

pub trait ChatProvider: Send + Sync {
    fn kind(&self) -> ProviderKind;
    fn model_id(&self) -> &str;
    fn complete(&self, req: &ChatRequest) -> Result<String, ProviderError>;
}

/// Settings shared by every provider kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    pub endpoint: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub timeout_secs: u64,
    pub max_in_flight: usize,
    /// Replay file for the scripted kind: a recorded `.json` transcript or
    /// a `.toml` rule script.
    pub transcript: Option<PathBuf>,
}

impl Default for ProviderConfig {
    fn default() -> ProviderConfig {
        ProviderConfig {
            kind: ProviderKind::Scripted,
            endpoint: "http://localhost:8000/v1/chat/completions".into(),
            api_key_env: "KAGENT_API_KEY".into(),
            model: "scripted".into(),
            temperature: 0.0,
            max_tokens: 4096,
            timeout_secs: 120,
            max_in_flight: 8,
            transcript: None,
        }
    }
}

/// Builds the provider described by `cfg`, wrapped in an in-flight limit.
pub fn build_provider(cfg: &ProviderConfig) -> Result<Arc<dyn ChatProvider>, ProviderError> {
    let inner: Arc<dyn ChatProvider> = match cfg.kind {
        ProviderKind::Http => Arc::new(HttpProvider::new(cfg)?),
        ProviderKind::Scripted => {
            let path = cfg.transcript.as_ref().ok_or_else(|| ProviderError::Config("scripted provider needs `transcript`".into()))?;
            Arc::new(ScriptedProvider::load(path)?.with_model(&cfg.model))
        }
    };
    Ok(Arc::new(LimitedProvider::new(inner, cfg.max_in_flight)))
}

pub struct HttpProvider {
    endpoint: String,
    api_key: Option<String>,
    model: String,
    agent: ureq::Agent,
}

impl HttpProvider {
    pub fn new(cfg: &ProviderConfig) -> Result<HttpProvider, ProviderError> {
        if cfg.endpoint.is_empty() {
            return Err(ProviderError::Config("empty endpoint".into()));
        }
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(cfg.timeout_secs.max(1))))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(HttpProvider {
            endpoint: cfg.endpoint.clone(),
            api_key: std::env::var(&cfg.api_key_env).ok().filter(|k| !k.is_empty()),
            model: cfg.model.clone(),
            agent,
        })
    }
}

#[derive(Deserialize)]
struct WireReply {
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: ChatMessage,
}

impl ChatProvider for HttpProvider {
    fn kind(&self) -> ProviderKind {
        ProviderKind::Http
    }

    fn model_id(&self) -> &str {
        &self.model
    }

    fn complete(&self, req: &ChatRequest) -> Result<String, ProviderError> {
        let mut call = self.agent.post(&self.endpoint).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            call = call.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = call.send_json(req).map_err(|e| ProviderError::Http(e.to_string()))?;
        let code = resp.status().as_u16();
        if code >= 400 {
            let body = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(ProviderError::Status { code, body });
        }
        let reply: WireReply = resp.body_mut().read_json().map_err(|e| ProviderError::Http(e.to_string()))?;
        reply.choices.into_iter().next().map(|c| c.message.content).ok_or_else(|| ProviderError::Http("reply has no choices".into()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub key: String,
    pub request: ChatRequest,
    pub response: String,
}

/// Recorded request/reply pairs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub entries: Vec<TranscriptEntry>,
}

impl Transcript {
    pub fn load(path: &Path) -> Result<Transcript, ProviderError> {
        let text = std::fs::read_to_string(path).map_err(|e| ProviderError::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| ProviderError::Io(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("transcript serializes");
        s.push('\n');
        s
    }

    pub fn save(&self, path: &Path) -> Result<(), ProviderError> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| ProviderError::Io(e.to_string()))?;
        }
        std::fs::write(path, self.to_json()).map_err(|e| ProviderError::Io(e.to_string()))
    }
}

/// Replies to any request whose text contains every `when` string. Replies
/// are served in order; the last one repeats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    pub when: Vec<String>,
    pub replies: Vec<String>,
}

impl Rule {
    pub fn new(when: &[&str], replies: &[&str]) -> Rule {
        Rule { when: when.iter().map(|s| s.to_string()).collect(), replies: replies.iter().map(|s| s.to_string()).collect() }
    }
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct RuleFile {
    #[serde(default)]
    rule: Vec<Rule>,
}

#[derive(Debug, Default)]
struct ScriptState {
    served: HashMap<String, usize>,
    rule_counts: Vec<usize>,
}

/// Deterministic fake. Looks a request up by key in a recorded transcript,
/// then falls back to the first matching rule.
#[derive(Debug)]
pub struct ScriptedProvider {
    model: String,
    recorded: HashMap<String, Vec<String>>,
    rules: Vec<Rule>,
    state: Mutex<ScriptState>,
}

impl ScriptedProvider {
    pub fn from_transcript(t: &Transcript) -> ScriptedProvider {
        let mut recorded: HashMap<String, Vec<String>> = HashMap::new();
        for e in &t.entries {
            recorded.entry(e.key.clone()).or_default().push(e.response.clone());
        }
        ScriptedProvider { model: "scripted".into(), recorded, rules: Vec::new(), state: Mutex::default() }
    }

    pub fn from_rules(rules: Vec<Rule>) -> ScriptedProvider {
        ScriptedProvider { model: "scripted".into(), recorded: HashMap::new(), rules, state: Mutex::default() }
    }

    pub fn rules_from_toml(text: &str) -> Result<Vec<Rule>, ProviderError> {
        toml::from_str::<RuleFile>(text).map(|f| f.rule).map_err(|e| ProviderError::Io(e.to_string()))
    }

    /// `.toml` files hold rules, anything else a recorded JSON transcript.
    pub fn load(path: &Path) -> Result<ScriptedProvider, ProviderError> {
        if path.extension().is_some_and(|e| e == "toml") {
            let text = std::fs::read_to_string(path).map_err(|e| ProviderError::Io(format!("{}: {e}", path.display())))?;
            Ok(ScriptedProvider::from_rules(ScriptedProvider::rules_from_toml(&text)?))
        } else {
            Ok(ScriptedProvider::from_transcript(&Transcript::load(path)?))
        }
    }

    pub fn with_model(mut self, model: &str) -> ScriptedProvider {
        self.model = model.to_string();
        self
    }
}

impl ChatProvider for ScriptedProvider {
    fn kind(&self) -> ProviderKind {
        ProviderKind::Scripted
    }

    fn model_id(&self) -> &str {
        &self.model
    }

    fn complete(&self, req: &ChatRequest) -> Result<String, ProviderError> {
        let key = req.key();
        let mut st = self.state.lock().unwrap_or_else(|p| p.into_inner());
        if let Some(replies) = self.recorded.get(&key) {
            let n = st.served.entry(key).or_insert(0);
            let reply = replies[(*n).min(replies.len() - 1)].clone();
            *n += 1;
            return Ok(reply);
        }
        let text = req.text();
        if st.rule_counts.len() < self.rules.len() {
            st.rule_counts.resize(self.rules.len(), 0);
        }
        for (i, rule) in self.rules.iter().enumerate() {
            if rule.replies.is_empty() || !rule.when.iter().all(|w| text.contains(w.as_str())) {
                continue;
            }
            let n = st.rule_counts[i];
            st.rule_counts[i] += 1;
            return Ok(rule.replies[n.min(rule.replies.len() - 1)].clone());
        }
        Err(ProviderError::MissingReply { key })
    }
}

/// Records every exchange of the wrapped provider.
pub struct RecordingProvider {
    inner: Arc<dyn ChatProvider>,
    log: Mutex<Vec<TranscriptEntry>>,
}

impl RecordingProvider {
    pub fn new(inner: Arc<dyn ChatProvider>) -> RecordingProvider {
        RecordingProvider { inner, log: Mutex::default() }
    }

    /// Exchanges so far, ordered by key so concurrent callers still produce
    /// a stable file. Repeats of one key keep their call order.
    pub fn transcript(&self) -> Transcript {
        let mut entries = self.log.lock().unwrap_or_else(|p| p.into_inner()).clone();
        entries.sort_by(|a, b| a.key.cmp(&b.key));
        Transcript { entries }
    }
}

impl ChatProvider for RecordingProvider {
    fn kind(&self) -> ProviderKind {
        self.inner.kind()
    }

    fn model_id(&self) -> &str {
        self.inner.model_id()
    }

    fn complete(&self, req: &ChatRequest) -> Result<String, ProviderError> {
        let response = self.inner.complete(req)?;
        self.log.lock().unwrap_or_else(|p| p.into_inner()).push(TranscriptEntry {
            key: req.key(),
            request: req.clone(),
            response: response.clone(),
        });
        Ok(response)
    }
}

/// Caps the number of concurrent calls into the wrapped provider.
pub struct LimitedProvider {
    inner: Arc<dyn ChatProvider>,
    limit: usize,
    in_flight: Mutex<usize>,
    freed: Condvar,
}

impl LimitedProvider {
    pub fn new(inner: Arc<dyn ChatProvider>, limit: usize) -> LimitedProvider {
        LimitedProvider { inner, limit: limit.max(1), in_flight: Mutex::new(0), freed: Condvar::new() }
    }
}

impl ChatProvider for LimitedProvider {
    fn kind(&self) -> ProviderKind {
        self.inner.kind()
    }

    fn model_id(&self) -> &str {
        self.inner.model_id()
    }

    fn complete(&self, req: &ChatRequest) -> Result<String, ProviderError> {
        {
            let mut n = self.in_flight.lock().unwrap_or_else(|p| p.into_inner());
            while *n >= self.limit {
                n = self.freed.wait(n).unwrap_or_else(|p| p.into_inner());
            }
            *n += 1;
        }
        let out = self.inner.complete(req);
        *self.in_flight.lock().unwrap_or_else(|p| p.into_inner()) -= 1;
        self.freed.notify_one();
        out
    }
}
