//! Uniform completion interface over interchangeable model backends.
//!
//! A [`PromptBundle`] is built from a role's system prompt, the session's
//! dialogue memory (oldest first) and the current request. Backends turn a
//! bundle into a [`Completion`]: live HTTP chat endpoints, scripted
//! sequences for deterministic runs, and record/replay wrappers.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::policy::ModelId;

pub const DEFAULT_MEMORY_CAPACITY: usize = 3;
pub const DEFAULT_MAX_INPUT_CHARS: usize = 24_000;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("prompt of {chars} characters exceeds the {limit}-character input limit of `{model}`")]
    OverlongPrompt {
        model: ModelId,
        chars: usize,
        limit: usize,
    },
    #[error("memory holds {got} dialogue pairs but capacity is {capacity}")]
    MemoryOverCapacity { got: usize, capacity: usize },
    #[error("{0} turns must have non-empty content")]
    EmptyTurn(&'static str),
    #[error("backend for `{model}` unavailable: {reason}")]
    BackendUnavailable { model: ModelId, reason: String },
    #[error("no backend registered for `{0}`")]
    BackendNotRegistered(ModelId),
    #[error("script exhausted for conversation `{conversation}`, model `{model}`, role {role:?}")]
    ScriptExhausted {
        conversation: String,
        model: ModelId,
        role: AgentRole,
    },
    #[error("replay mismatch in conversation `{conversation}`: {detail}")]
    ReplayMismatch { conversation: String, detail: String },
    #[error("trace i/o: {0}")]
    Trace(String),
    #[error("prompt directory: {0}")]
    Prompts(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChatRole {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatTurn {
    pub role: ChatRole,
    pub content: String,
}

impl ChatTurn {
    fn new(role: ChatRole, content: impl Into<String>) -> Self {
        ChatTurn {
            role,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentRole {
    Correction,
    Interpretation,
    Annotation,
    TestGeneration,
    TestJudgment,
}

impl AgentRole {
    pub const ALL: [AgentRole; 5] = [
        AgentRole::Correction,
        AgentRole::Interpretation,
        AgentRole::Annotation,
        AgentRole::TestGeneration,
        AgentRole::TestJudgment,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AgentRole::Correction => "correction",
            AgentRole::Interpretation => "interpretation",
            AgentRole::Annotation => "annotation",
            AgentRole::TestGeneration => "test_generation",
            AgentRole::TestJudgment => "test_judgment",
        }
    }
}

/// One remembered exchange: what was asked and what came back.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialoguePair {
    pub user: String,
    pub assistant: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub agent_role: AgentRole,
    pub turns: Vec<ChatTurn>,
    pub model: ModelId,
}

impl PromptBundle {
    pub fn content_chars(&self) -> usize {
        self.turns.iter().map(|t| t.content.chars().count()).sum()
    }

    /// Content of the final user turn.
    pub fn payload(&self) -> &str {
        self.turns.last().map_or("", |t| t.content.as_str())
    }

    /// Hex SHA-256 over the canonical JSON form of the bundle.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("bundle serializes");
        hex(&Sha256::digest(bytes))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// System prompt text per agent role.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptLibrary {
    prompts: BTreeMap<AgentRole, String>,
}

impl Default for PromptLibrary {
    fn default() -> Self {
        let builtin = [
            (AgentRole::Correction, include_str!("../prompts/correction.txt")),
            (
                AgentRole::Interpretation,
                include_str!("../prompts/interpretation.txt"),
            ),
            (AgentRole::Annotation, include_str!("../prompts/annotation.txt")),
            (
                AgentRole::TestGeneration,
                include_str!("../prompts/test_generation.txt"),
            ),
            (
                AgentRole::TestJudgment,
                include_str!("../prompts/test_judgment.txt"),
            ),
        ];
        PromptLibrary {
            prompts: builtin
                .into_iter()
                .map(|(role, text)| (role, text.trim().to_string()))
                .collect(),
        }
    }
}

impl PromptLibrary {
    /// Built-in prompts, overridden by any `<role>.txt` found in `dir`.
    pub fn from_dir(dir: &Path) -> Result<Self, GatewayError> {
        if !dir.is_dir() {
            return Err(GatewayError::Prompts(format!(
                "{} is not a directory",
                dir.display()
            )));
        }
        let mut lib = Self::default();
        for role in AgentRole::ALL {
            let path = dir.join(format!("{}.txt", role.as_str()));
            if path.exists() {
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| GatewayError::Prompts(format!("{}: {e}", path.display())))?;
                lib.prompts.insert(role, text.trim().to_string());
            }
        }
        Ok(lib)
    }

    pub fn get(&self, role: AgentRole) -> &str {
        &self.prompts[&role]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptLimits {
    pub memory_capacity: usize,
    pub default_max_input_chars: usize,
    pub max_input_chars: BTreeMap<ModelId, usize>,
}

impl Default for PromptLimits {
    fn default() -> Self {
        PromptLimits {
            memory_capacity: DEFAULT_MEMORY_CAPACITY,
            default_max_input_chars: DEFAULT_MAX_INPUT_CHARS,
            max_input_chars: BTreeMap::new(),
        }
    }
}

impl PromptLimits {
    pub fn limit_for(&self, model: &ModelId) -> usize {
        self.max_input_chars
            .get(model)
            .copied()
            .unwrap_or(self.default_max_input_chars)
    }
}

/// System prompt, then memory oldest-first, then the payload as the final
/// user turn.
pub fn build_prompt(
    library: &PromptLibrary,
    role: AgentRole,
    memory: &[DialoguePair],
    task_payload: &str,
    model: &ModelId,
    limits: &PromptLimits,
) -> Result<PromptBundle, GatewayError> {
    if memory.len() > limits.memory_capacity {
        return Err(GatewayError::MemoryOverCapacity {
            got: memory.len(),
            capacity: limits.memory_capacity,
        });
    }
    if task_payload.trim().is_empty() {
        return Err(GatewayError::EmptyTurn("user"));
    }
    let mut turns = Vec::with_capacity(2 + 2 * memory.len());
    turns.push(ChatTurn::new(ChatRole::System, library.get(role)));
    for pair in memory {
        if pair.user.is_empty() {
            return Err(GatewayError::EmptyTurn("user"));
        }
        if pair.assistant.is_empty() {
            return Err(GatewayError::EmptyTurn("assistant"));
        }
        turns.push(ChatTurn::new(ChatRole::User, pair.user.clone()));
        turns.push(ChatTurn::new(ChatRole::Assistant, pair.assistant.clone()));
    }
    turns.push(ChatTurn::new(ChatRole::User, task_payload));
    let bundle = PromptBundle {
        agent_role: role,
        turns,
        model: model.clone(),
    };
    let limit = limits.limit_for(model);
    let chars = bundle.content_chars();
    if chars > limit {
        return Err(GatewayError::OverlongPrompt {
            model: model.clone(),
            chars,
            limit,
        });
    }
    Ok(bundle)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub elapsed_s: f64,
}

pub trait Backend: Send + Sync {
    fn complete(&self, bundle: &PromptBundle, conversation_id: &str) -> Result<Completion, GatewayError>;
}

/// One scripted answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedReply {
    #[serde(default)]
    pub text: String,
    #[serde(default)]
    pub elapsed_s: f64,
    /// Appends the request payload to `text`.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub echo: bool,
    /// Simulates a backend outage for this call.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub unavailable: bool,
}

impl ScriptedReply {
    pub fn text(text: impl Into<String>, elapsed_s: f64) -> Self {
        ScriptedReply {
            text: text.into(),
            elapsed_s,
            echo: false,
            unavailable: false,
        }
    }

    pub fn echo(prefix: impl Into<String>, elapsed_s: f64) -> Self {
        ScriptedReply {
            echo: true,
            ..Self::text(prefix, elapsed_s)
        }
    }

    pub fn unavailable() -> Self {
        ScriptedReply {
            unavailable: true,
            ..Self::text("", 0.0)
        }
    }
}

/// Replies consumed in order for one key. `None` fields match anything.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptSequence {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conversation_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelId>,
    pub role: AgentRole,
    pub replies: Vec<ScriptedReply>,
}

/// Reply repeated forever once matching sequences are used up.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptDefault {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conversation_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelId>,
    pub role: AgentRole,
    pub reply: ScriptedReply,
}

/// Serializable script for [`ScriptedBackend`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Script {
    #[serde(default)]
    pub sequences: Vec<ScriptSequence>,
    #[serde(default)]
    pub defaults: Vec<ScriptDefault>,
}

impl Script {
    pub fn push(
        &mut self,
        conversation_id: Option<&str>,
        model: Option<&ModelId>,
        role: AgentRole,
        replies: Vec<ScriptedReply>,
    ) -> &mut Self {
        self.sequences.push(ScriptSequence {
            conversation_id: conversation_id.map(str::to_string),
            model: model.cloned(),
            role,
            replies,
        });
        self
    }

    pub fn default_reply(
        &mut self,
        model: Option<&ModelId>,
        role: AgentRole,
        reply: ScriptedReply,
    ) -> &mut Self {
        self.defaults.push(ScriptDefault {
            conversation_id: None,
            model: model.cloned(),
            role,
            reply,
        });
        self
    }

    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GatewayError::Trace(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| GatewayError::Trace(format!("{}: {e}", path.display())))
    }
}

type ScriptKey = (Option<String>, Option<ModelId>, AgentRole);

/// Deterministic backend returning pre-authored replies.
///
/// Lookup goes from the most to the least specific key:
/// (conversation, model), (conversation, any), (any, model), (any, any);
/// sequences are consulted before defaults.
#[derive(Debug, Default)]
pub struct ScriptedBackend {
    queues: Mutex<HashMap<ScriptKey, VecDeque<ScriptedReply>>>,
    defaults: HashMap<ScriptKey, ScriptedReply>,
}

impl ScriptedBackend {
    pub fn new(script: Script) -> Self {
        let mut queues: HashMap<ScriptKey, VecDeque<ScriptedReply>> = HashMap::new();
        for seq in script.sequences {
            queues
                .entry((seq.conversation_id, seq.model, seq.role))
                .or_default()
                .extend(seq.replies);
        }
        let defaults = script
            .defaults
            .into_iter()
            .map(|d| ((d.conversation_id, d.model, d.role), d.reply))
            .collect();
        ScriptedBackend {
            queues: Mutex::new(queues),
            defaults,
        }
    }

    /// Replies still queued across all sequences.
    pub fn remaining(&self) -> usize {
        self.queues.lock().unwrap().values().map(VecDeque::len).sum()
    }

    fn keys(conversation: &str, model: &ModelId, role: AgentRole) -> [ScriptKey; 4] {
        let conv = Some(conversation.to_string());
        let model = Some(model.clone());
        [
            (conv.clone(), model.clone(), role),
            (conv, None, role),
            (None, model, role),
            (None, None, role),
        ]
    }
}

impl Backend for ScriptedBackend {
    fn complete(&self, bundle: &PromptBundle, conversation_id: &str) -> Result<Completion, GatewayError> {
        let keys = Self::keys(conversation_id, &bundle.model, bundle.agent_role);
        let reply = {
            let mut queues = self.queues.lock().unwrap();
            keys.iter()
                .find_map(|k| queues.get_mut(k).and_then(VecDeque::pop_front))
        }
        .or_else(|| keys.iter().find_map(|k| self.defaults.get(k).cloned()))
        .ok_or_else(|| GatewayError::ScriptExhausted {
            conversation: conversation_id.to_string(),
            model: bundle.model.clone(),
            role: bundle.agent_role,
        })?;
        if reply.unavailable {
            return Err(GatewayError::BackendUnavailable {
                model: bundle.model.clone(),
                reason: "scripted outage".into(),
            });
        }
        let mut text = reply.text;
        if reply.echo {
            text.push_str(bundle.payload());
        }
        Ok(Completion {
            text,
            elapsed_s: reply.elapsed_s,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpBackendConfig {
    pub endpoint: String,
    /// Name of the environment variable holding a bearer token.
    pub api_key_env: Option<String>,
    /// Model name sent on the wire, if it differs from the model id.
    pub remote_model: Option<String>,
    pub timeout_s: f64,
    pub retries: u32,
    pub backoff_ms: u64,
    pub temperature: Option<f64>,
}

impl Default for HttpBackendConfig {
    fn default() -> Self {
        HttpBackendConfig {
            endpoint: String::new(),
            api_key_env: None,
            remote_model: None,
            timeout_s: 120.0,
            retries: 2,
            backoff_ms: 500,
            temperature: Some(0.2),
        }
    }
}

#[derive(Serialize)]
struct WireMessage<'a> {
    role: ChatRole,
    content: &'a str,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: Vec<WireMessage<'a>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    temperature: Option<f64>,
}

#[derive(Deserialize)]
struct WireResponse {
    content: String,
}

/// Chat endpoint speaking `POST {model, messages}` → `{content}`.
#[derive(Debug)]
pub struct HttpBackend {
    config: HttpBackendConfig,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn new(config: HttpBackendConfig) -> Self {
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_secs_f64(config.timeout_s))
            .build();
        HttpBackend { config, agent }
    }

    fn attempt(&self, body: &WireRequest<'_>) -> Result<String, String> {
        let mut req = self
            .agent
            .post(&self.config.endpoint)
            .set("Content-Type", "application/json");
        if let Some(var) = &self.config.api_key_env {
            let key = std::env::var(var).map_err(|_| format!("environment variable {var} is not set"))?;
            req = req.set("Authorization", &format!("Bearer {key}"));
        }
        let resp = req.send_json(body).map_err(|e| e.to_string())?;
        let parsed: WireResponse = resp.into_json().map_err(|e| e.to_string())?;
        Ok(parsed.content)
    }
}

impl Backend for HttpBackend {
    fn complete(&self, bundle: &PromptBundle, _conversation_id: &str) -> Result<Completion, GatewayError> {
        let body = WireRequest {
            model: self
                .config
                .remote_model
                .as_deref()
                .unwrap_or(bundle.model.as_str()),
            messages: bundle
                .turns
                .iter()
                .map(|t| WireMessage {
                    role: t.role,
                    content: &t.content,
                })
                .collect(),
            temperature: self.config.temperature,
        };
        let started = Instant::now();
        let mut last_err = String::new();
        for attempt in 0..=self.config.retries {
            if attempt > 0 {
                let wait = self.config.backoff_ms.saturating_mul(1 << (attempt - 1).min(16));
                thread::sleep(Duration::from_millis(wait));
            }
            match self.attempt(&body) {
                Ok(text) => {
                    return Ok(Completion {
                        text,
                        elapsed_s: started.elapsed().as_secs_f64(),
                    })
                }
                Err(e) => last_err = e,
            }
        }
        Err(GatewayError::BackendUnavailable {
            model: bundle.model.clone(),
            reason: format!(
                "{} attempts failed; last error: {last_err}",
                self.config.retries + 1
            ),
        })
    }
}

/// One line of a trace file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub conversation_id: String,
    pub model: ModelId,
    pub agent_role: AgentRole,
    pub request_digest: String,
    pub response: String,
    pub elapsed_s: f64,
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceEntry>, GatewayError> {
    let file = File::open(path).map_err(|e| GatewayError::Trace(format!("{}: {e}", path.display())))?;
    let mut entries = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| GatewayError::Trace(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry = serde_json::from_str(&line)
            .map_err(|e| GatewayError::Trace(format!("{}:{}: {e}", path.display(), i + 1)))?;
        entries.push(entry);
    }
    Ok(entries)
}

/// Wraps a backend and appends every successful call to a trace.
pub struct RecordingBackend {
    inner: Arc<dyn Backend>,
    sink: Mutex<Box<dyn Write + Send>>,
}

impl RecordingBackend {
    pub fn new(inner: Arc<dyn Backend>, sink: Box<dyn Write + Send>) -> Self {
        RecordingBackend {
            inner,
            sink: Mutex::new(sink),
        }
    }

    pub fn to_file(inner: Arc<dyn Backend>, path: &Path) -> Result<Self, GatewayError> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| GatewayError::Trace(format!("{}: {e}", path.display())))?;
        Ok(Self::new(inner, Box::new(file)))
    }
}

impl Backend for RecordingBackend {
    fn complete(&self, bundle: &PromptBundle, conversation_id: &str) -> Result<Completion, GatewayError> {
        let completion = self.inner.complete(bundle, conversation_id)?;
        let entry = TraceEntry {
            conversation_id: conversation_id.to_string(),
            model: bundle.model.clone(),
            agent_role: bundle.agent_role,
            request_digest: bundle.digest(),
            response: completion.text.clone(),
            elapsed_s: completion.elapsed_s,
        };
        let mut line = serde_json::to_vec(&entry).map_err(|e| GatewayError::Trace(e.to_string()))?;
        line.push(b'\n');
        let mut sink = self.sink.lock().unwrap();
        sink.write_all(&line)
            .and_then(|_| sink.flush())
            .map_err(|e| GatewayError::Trace(e.to_string()))?;
        Ok(completion)
    }
}

/// Serves completions from a recorded trace, per conversation in order.
/// Every request must match the recorded model, role and request digest.
#[derive(Debug)]
pub struct ReplayBackend {
    queues: Mutex<HashMap<String, VecDeque<TraceEntry>>>,
}

impl ReplayBackend {
    pub fn new(entries: Vec<TraceEntry>) -> Self {
        let mut queues: HashMap<String, VecDeque<TraceEntry>> = HashMap::new();
        for e in entries {
            queues.entry(e.conversation_id.clone()).or_default().push_back(e);
        }
        ReplayBackend {
            queues: Mutex::new(queues),
        }
    }

    pub fn from_file(path: &Path) -> Result<Self, GatewayError> {
        Ok(Self::new(read_trace(path)?))
    }

    pub fn remaining(&self) -> usize {
        self.queues.lock().unwrap().values().map(VecDeque::len).sum()
    }
}

impl Backend for ReplayBackend {
    fn complete(&self, bundle: &PromptBundle, conversation_id: &str) -> Result<Completion, GatewayError> {
        let mismatch = |detail: String| GatewayError::ReplayMismatch {
            conversation: conversation_id.to_string(),
            detail,
        };
        let entry = self
            .queues
            .lock()
            .unwrap()
            .get_mut(conversation_id)
            .and_then(VecDeque::pop_front)
            .ok_or_else(|| mismatch("no recorded completion left".into()))?;
        if entry.model != bundle.model || entry.agent_role != bundle.agent_role {
            return Err(mismatch(format!(
                "recorded {}/{:?}, requested {}/{:?}",
                entry.model, entry.agent_role, bundle.model, bundle.agent_role
            )));
        }
        let digest = bundle.digest();
        if entry.request_digest != digest {
            return Err(mismatch(format!(
                "request digest {digest} differs from recorded {}",
                entry.request_digest
            )));
        }
        Ok(Completion {
            text: entry.response,
            elapsed_s: entry.elapsed_s,
        })
    }
}

/// Routes bundles to the backend registered for their model.
#[derive(Clone)]
pub struct Gateway {
    backends: BTreeMap<ModelId, Arc<dyn Backend>>,
    fallback: Option<Arc<dyn Backend>>,
    prompts: PromptLibrary,
    limits: PromptLimits,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("models", &self.backends.keys().collect::<Vec<_>>())
            .field("fallback", &self.fallback.is_some())
            .field("limits", &self.limits)
            .finish()
    }
}

impl Gateway {
    pub fn new(prompts: PromptLibrary, limits: PromptLimits) -> Self {
        Gateway {
            backends: BTreeMap::new(),
            fallback: None,
            prompts,
            limits,
        }
    }

    /// Gateway sending every model to one backend.
    pub fn uniform(backend: Arc<dyn Backend>, limits: PromptLimits) -> Self {
        let mut g = Self::new(PromptLibrary::default(), limits);
        g.fallback = Some(backend);
        g
    }

    pub fn register(&mut self, model: ModelId, backend: Arc<dyn Backend>) -> &mut Self {
        self.backends.insert(model, backend);
        self
    }

    pub fn set_fallback(&mut self, backend: Arc<dyn Backend>) -> &mut Self {
        self.fallback = Some(backend);
        self
    }

    pub fn limits(&self) -> &PromptLimits {
        &self.limits
    }

    pub fn build_prompt(
        &self,
        role: AgentRole,
        memory: &[DialoguePair],
        task_payload: &str,
        model: &ModelId,
    ) -> Result<PromptBundle, GatewayError> {
        build_prompt(&self.prompts, role, memory, task_payload, model, &self.limits)
    }

    pub fn complete(&self, bundle: &PromptBundle, conversation_id: &str) -> Result<Completion, GatewayError> {
        let backend = self
            .backends
            .get(&bundle.model)
            .or(self.fallback.as_ref())
            .ok_or_else(|| GatewayError::BackendNotRegistered(bundle.model.clone()))?;
        backend.complete(bundle, conversation_id)
    }
}
