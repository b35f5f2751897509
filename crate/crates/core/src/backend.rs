//! Chat-completion and embedding clients.
//!
//! Everything model-facing goes through [`ChatBackend`] and
//! [`EmbeddingBackend`]. Three families implement them:
//!
//! * [`HttpBackend`] speaks the common `/chat/completions` and `/embeddings`
//!   JSON schema, so it works against hosted APIs and local model servers.
//! * [`ScriptedChat`], [`HashEmbedder`] and [`TableEmbedder`] are
//!   deterministic in-process mocks.
//! * [`ReplayChat`] / [`ReplayEmbedder`] record responses of another backend
//!   into a line-delimited replay file, or play them back offline.
//!
//! Replay and script keys are SHA-256 digests of a canonical JSON rendering
//! of the request, so they are stable across runs and platforms.

use std::collections::HashMap;
use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BackendError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("request timed out")]
    Timeout,
    #[error("response schema error: {0}")]
    Schema(String),
    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("no recorded response for request {0}")]
    ReplayMiss(String),
    #[error("replay file: {0}")]
    Replay(String),
}

impl BackendError {
    /// Only transport failures and timeouts are worth retrying.
    pub fn is_retryable(&self) -> bool {
        matches!(self, BackendError::Transport(_) | BackendError::Timeout)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub temperature: f64,
    pub seed: u64,
    pub max_tokens: u32,
}

impl GenerationParams {
    pub fn new(temperature: f64, seed: u64, max_tokens: u32) -> Result<Self, BackendError> {
        let p = Self {
            temperature,
            seed,
            max_tokens,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn greedy(seed: u64, max_tokens: u32) -> Self {
        Self {
            temperature: 0.0,
            seed,
            max_tokens,
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(BackendError::InvalidRequest(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(BackendError::InvalidRequest("max_tokens must be positive".into()));
        }
        Ok(())
    }
}

fn validate_messages(messages: &[ChatMessage]) -> Result<(), BackendError> {
    if messages.is_empty() {
        return Err(BackendError::EmptyInput);
    }
    for m in messages {
        if m.role != Role::System && m.content.is_empty() {
            return Err(BackendError::InvalidRequest(format!("empty {:?} message", m.role)));
        }
    }
    Ok(())
}

/// A dense embedding tagged with the model that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector<T> {
    pub values: Vec<T>,
    pub model_id: String,
}

impl<T: Scalar> EmbeddingVector<T> {
    pub fn new(values: Vec<T>, model_id: impl Into<String>) -> Result<Self, BackendError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(BackendError::Schema("non-finite embedding value".into()));
        }
        Ok(Self {
            values,
            model_id: model_id.into(),
        })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn cast<U: Scalar>(&self) -> EmbeddingVector<U> {
        EmbeddingVector {
            values: self
                .values
                .iter()
                .map(|v| U::from(*v).expect("finite float converts"))
                .collect(),
            model_id: self.model_id.clone(),
        }
    }
}

pub trait ChatBackend: Send + Sync {
    /// First-choice message content, verbatim.
    fn chat_complete(&self, messages: &[ChatMessage], params: &GenerationParams) -> Result<String, BackendError>;

    fn model_id(&self) -> &str;
}

pub trait EmbeddingBackend: Send + Sync {
    /// One vector per input text, same order, uniform dimension.
    fn embed_texts(&self, texts: &[String]) -> Result<Vec<EmbeddingVector<f64>>, BackendError>;

    fn model_id(&self) -> &str;
}

impl<B: ChatBackend + ?Sized> ChatBackend for Arc<B> {
    fn chat_complete(&self, messages: &[ChatMessage], params: &GenerationParams) -> Result<String, BackendError> {
        (**self).chat_complete(messages, params)
    }

    fn model_id(&self) -> &str {
        (**self).model_id()
    }
}

impl<B: EmbeddingBackend + ?Sized> EmbeddingBackend for Arc<B> {
    fn embed_texts(&self, texts: &[String]) -> Result<Vec<EmbeddingVector<f64>>, BackendError> {
        (**self).embed_texts(texts)
    }

    fn model_id(&self) -> &str {
        (**self).model_id()
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    use std::fmt::Write as _;
    bytes.iter().fold(String::with_capacity(bytes.len() * 2), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Hex SHA-256 of arbitrary bytes.
pub fn sha256_hex(data: impl AsRef<[u8]>) -> String {
    hex(&Sha256::digest(data.as_ref()))
}

/// Stable key of a chat request. With `params = None` the key covers the
/// message list only.
pub fn request_key(messages: &[ChatMessage], params: Option<&GenerationParams>) -> String {
    let msgs: Vec<Value> = messages
        .iter()
        .map(|m| json!({"role": m.role, "content": m.content}))
        .collect();
    let canonical = match params {
        Some(p) => json!({
            "messages": msgs,
            "temperature": p.temperature,
            "seed": p.seed,
            "max_tokens": p.max_tokens,
        }),
        None => json!({ "messages": msgs }),
    };
    sha256_hex(canonical.to_string())
}

/// Stable key of one embedding request.
pub fn embedding_key(model_id: &str, text: &str) -> String {
    sha256_hex(json!({"model": model_id, "input": text}).to_string())
}

/// Run `op`, retrying up to `retries` extra times on retryable errors.
pub fn with_retries<T>(retries: u32, mut op: impl FnMut() -> Result<T, BackendError>) -> Result<T, BackendError> {
    let mut attempt = 0;
    loop {
        match op() {
            Err(e) if e.is_retryable() && attempt < retries => attempt += 1,
            other => return other,
        }
    }
}

/// Endpoint configuration shared by chat and embedding clients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: Option<String>,
    pub timeout_secs: u64,
    pub retries: u32,
    pub max_in_flight: usize,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            base_url: "http://localhost:8000/v1".into(),
            model: "default".into(),
            api_key_env: None,
            timeout_secs: 60,
            retries: 2,
            max_in_flight: 8,
        }
    }
}

struct Semaphore {
    permits: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn new(n: usize) -> Self {
        Self {
            permits: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut p = self.permits.lock().expect("semaphore poisoned");
        while *p == 0 {
            p = self.cv.wait(p).expect("semaphore poisoned");
        }
        *p -= 1;
        Permit(self)
    }
}

struct Permit<'a>(&'a Semaphore);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.permits.lock().expect("semaphore poisoned") += 1;
        self.0.cv.notify_one();
    }
}

/// HTTP client for the chat-completion / embedding JSON schema.
pub struct HttpBackend {
    cfg: BackendConfig,
    agent: ureq::Agent,
    api_key: Option<String>,
    in_flight: Semaphore,
}

impl std::fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpBackend")
            .field("base_url", &self.cfg.base_url)
            .field("model", &self.cfg.model)
            .finish_non_exhaustive()
    }
}

impl HttpBackend {
    pub fn new(cfg: BackendConfig) -> Self {
        let api_key = cfg.api_key_env.as_deref().and_then(|var| std::env::var(var).ok());
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(cfg.timeout_secs.max(1))))
            .http_status_as_error(false)
            .build()
            .into();
        let in_flight = Semaphore::new(cfg.max_in_flight);
        Self {
            cfg,
            agent,
            api_key,
            in_flight,
        }
    }

    pub fn config(&self) -> &BackendConfig {
        &self.cfg
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{}", self.cfg.base_url.trim_end_matches('/'), path)
    }

    fn post(&self, path: &str, body: &Value) -> Result<Value, BackendError> {
        let _permit = self.in_flight.acquire();
        let mut req = self.agent.post(&self.url(path));
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(body).map_err(map_ureq)?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(map_ureq)?;
        if status >= 400 {
            return Err(BackendError::Transport(format!("HTTP {status}")));
        }
        serde_json::from_str(&text).map_err(|e| BackendError::Schema(format!("invalid JSON: {e}")))
    }
}

fn map_ureq(e: ureq::Error) -> BackendError {
    match e {
        ureq::Error::Timeout(_) => BackendError::Timeout,
        ureq::Error::Io(io) if io.kind() == std::io::ErrorKind::TimedOut => BackendError::Timeout,
        other => BackendError::Transport(other.to_string()),
    }
}

/// Extract `choices[0].message.content`.
pub fn parse_chat_response(body: &Value) -> Result<String, BackendError> {
    body.get("choices")
        .and_then(|c| c.get(0))
        .and_then(|c| c.get("message"))
        .and_then(|m| m.get("content"))
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| BackendError::Schema("missing choices[0].message.content".into()))
}

/// Extract `data[i].embedding`, ordered by `data[i].index` when present.
pub fn parse_embedding_response(
    body: &Value,
    expected: usize,
    model_id: &str,
) -> Result<Vec<EmbeddingVector<f64>>, BackendError> {
    let data = body
        .get("data")
        .and_then(Value::as_array)
        .ok_or_else(|| BackendError::Schema("missing data array".into()))?;
    let mut rows: Vec<(usize, Vec<f64>)> = Vec::with_capacity(data.len());
    for (pos, item) in data.iter().enumerate() {
        let idx = item
            .get("index")
            .and_then(Value::as_u64)
            .map(|i| i as usize)
            .unwrap_or(pos);
        let values = item
            .get("embedding")
            .and_then(Value::as_array)
            .ok_or_else(|| BackendError::Schema(format!("data[{pos}] lacks embedding")))?
            .iter()
            .map(|v| {
                v.as_f64()
                    .ok_or_else(|| BackendError::Schema("non-numeric embedding value".into()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push((idx, values));
    }
    rows.sort_by_key(|(i, _)| *i);
    if rows.len() != expected {
        return Err(BackendError::Schema(format!(
            "{} embeddings for {expected} inputs",
            rows.len()
        )));
    }
    let out = rows
        .into_iter()
        .map(|(_, v)| EmbeddingVector::new(v, model_id))
        .collect::<Result<Vec<_>, _>>()?;
    check_uniform(&out)?;
    Ok(out)
}

fn check_uniform<T>(vs: &[EmbeddingVector<T>]) -> Result<(), BackendError> {
    if let Some(first) = vs.first() {
        let dim = first.values.len();
        if let Some(bad) = vs.iter().find(|v| v.values.len() != dim) {
            return Err(BackendError::DimensionMismatch {
                expected: dim,
                got: bad.values.len(),
            });
        }
    }
    Ok(())
}

impl ChatBackend for HttpBackend {
    fn chat_complete(&self, messages: &[ChatMessage], params: &GenerationParams) -> Result<String, BackendError> {
        validate_messages(messages)?;
        params.validate()?;
        let body = json!({
            "model": self.cfg.model,
            "messages": messages,
            "temperature": params.temperature,
            "seed": params.seed,
            "max_tokens": params.max_tokens,
        });
        with_retries(self.cfg.retries, || {
            let resp = self.post("chat/completions", &body)?;
            parse_chat_response(&resp)
        })
    }

    fn model_id(&self) -> &str {
        &self.cfg.model
    }
}

impl EmbeddingBackend for HttpBackend {
    fn embed_texts(&self, texts: &[String]) -> Result<Vec<EmbeddingVector<f64>>, BackendError> {
        if texts.is_empty() {
            return Err(BackendError::EmptyInput);
        }
        let body = json!({"model": self.cfg.model, "input": texts});
        with_retries(self.cfg.retries, || {
            let resp = self.post("embeddings", &body)?;
            parse_embedding_response(&resp, texts.len(), &self.cfg.model)
        })
    }

    fn model_id(&self) -> &str {
        &self.cfg.model
    }
}

type ChatRule = dyn Fn(&[ChatMessage], &GenerationParams) -> Option<String> + Send + Sync;

/// Deterministic scripted chat mock.
///
/// Lookup order: exact `(messages, params)` entry, then messages-only
/// entry, then the rule closure. Anything else is a [`BackendError::ReplayMiss`].
#[derive(Default)]
pub struct ScriptedChat {
    model_id: String,
    entries: HashMap<String, String>,
    rule: Option<Box<ChatRule>>,
}

impl ScriptedChat {
    pub fn new(model_id: impl Into<String>) -> Self {
        Self {
            model_id: model_id.into(),
            ..Default::default()
        }
    }

    /// Answer `response` to this message list under any parameters.
    pub fn with(mut self, messages: &[ChatMessage], response: impl Into<String>) -> Self {
        self.insert(request_key(messages, None), response);
        self
    }

    /// Answer `response` only for these exact parameters.
    pub fn with_params(
        mut self,
        messages: &[ChatMessage],
        params: &GenerationParams,
        response: impl Into<String>,
    ) -> Self {
        self.insert(request_key(messages, Some(params)), response);
        self
    }

    pub fn insert(&mut self, key: String, response: impl Into<String>) {
        self.entries.insert(key, response.into());
    }

    /// Fallback answering function; must be pure for referential transparency.
    pub fn with_rule(
        mut self,
        rule: impl Fn(&[ChatMessage], &GenerationParams) -> Option<String> + Send + Sync + 'static,
    ) -> Self {
        self.rule = Some(Box::new(rule));
        self
    }
}

impl ChatBackend for ScriptedChat {
    fn chat_complete(&self, messages: &[ChatMessage], params: &GenerationParams) -> Result<String, BackendError> {
        validate_messages(messages)?;
        params.validate()?;
        let exact = request_key(messages, Some(params));
        if let Some(r) = self.entries.get(&exact) {
            return Ok(r.clone());
        }
        let loose = request_key(messages, None);
        if let Some(r) = self.entries.get(&loose) {
            return Ok(r.clone());
        }
        if let Some(rule) = &self.rule {
            if let Some(r) = rule(messages, params) {
                return Ok(r);
            }
        }
        Err(BackendError::ReplayMiss(loose))
    }

    fn model_id(&self) -> &str {
        &self.model_id
    }
}

/// Pseudo-random unit-scale vectors derived from a hash of the text.
/// Identical texts always get identical vectors.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    pub dim: usize,
    pub model_id: String,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            model_id: format!("hash-{dim}"),
        }
    }

    pub fn vector(&self, text: &str) -> Vec<f64> {
        let digest = Sha256::digest(text.as_bytes());
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        let mut rng = ChaCha8Rng::from_seed(seed);
        (0..self.dim).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }
}

impl EmbeddingBackend for HashEmbedder {
    fn embed_texts(&self, texts: &[String]) -> Result<Vec<EmbeddingVector<f64>>, BackendError> {
        if texts.is_empty() {
            return Err(BackendError::EmptyInput);
        }
        texts
            .iter()
            .map(|t| EmbeddingVector::new(self.vector(t), self.model_id.clone()))
            .collect()
    }

    fn model_id(&self) -> &str {
        &self.model_id
    }
}

/// Explicit text → vector table, with optional hashed fallback.
#[derive(Debug, Clone)]
pub struct TableEmbedder {
    pub model_id: String,
    table: HashMap<String, Vec<f64>>,
    fallback: Option<HashEmbedder>,
}

impl TableEmbedder {
    pub fn new(model_id: impl Into<String>) -> Self {
        Self {
            model_id: model_id.into(),
            table: HashMap::new(),
            fallback: None,
        }
    }

    pub fn with(mut self, text: impl Into<String>, vector: Vec<f64>) -> Self {
        self.table.insert(text.into(), vector);
        self
    }

    pub fn with_fallback(mut self, dim: usize) -> Self {
        self.fallback = Some(HashEmbedder::new(dim));
        self
    }
}

impl EmbeddingBackend for TableEmbedder {
    fn embed_texts(&self, texts: &[String]) -> Result<Vec<EmbeddingVector<f64>>, BackendError> {
        if texts.is_empty() {
            return Err(BackendError::EmptyInput);
        }
        let out = texts
            .iter()
            .map(|t| {
                let v = match (self.table.get(t), &self.fallback) {
                    (Some(v), _) => v.clone(),
                    (None, Some(h)) => h.vector(t),
                    (None, None) => return Err(BackendError::ReplayMiss(t.clone())),
                };
                EmbeddingVector::new(v, self.model_id.clone())
            })
            .collect::<Result<Vec<_>, _>>()?;
        check_uniform(&out)?;
        Ok(out)
    }

    fn model_id(&self) -> &str {
        &self.model_id
    }
}

/// One line of a replay file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ReplayEntry {
    Chat { key: String, response: String },
    Embedding { key: String, embedding: Vec<f64> },
}

impl ReplayEntry {
    pub fn key(&self) -> &str {
        match self {
            ReplayEntry::Chat { key, .. } | ReplayEntry::Embedding { key, .. } => key,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReplayMode {
    Playback,
    Record,
}

/// Line-delimited `request-hash → response` store.
#[derive(Debug, Default)]
pub struct ReplayStore {
    path: Option<PathBuf>,
    chat: HashMap<String, String>,
    embeddings: HashMap<String, Vec<f64>>,
}

impl ReplayStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Open (or prepare to create) a replay file.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, BackendError> {
        let path = path.as_ref().to_path_buf();
        let mut store = Self {
            path: Some(path.clone()),
            ..Default::default()
        };
        if path.exists() {
            let f = std::fs::File::open(&path).map_err(|e| BackendError::Replay(e.to_string()))?;
            for (i, line) in BufReader::new(f).lines().enumerate() {
                let line = line.map_err(|e| BackendError::Replay(e.to_string()))?;
                if line.trim().is_empty() {
                    continue;
                }
                let entry: ReplayEntry =
                    serde_json::from_str(&line).map_err(|e| BackendError::Replay(format!("line {}: {e}", i + 1)))?;
                store.absorb(entry);
            }
        }
        Ok(store)
    }

    fn absorb(&mut self, entry: ReplayEntry) {
        match entry {
            ReplayEntry::Chat { key, response } => {
                self.chat.insert(key, response);
            }
            ReplayEntry::Embedding { key, embedding } => {
                self.embeddings.insert(key, embedding);
            }
        }
    }

    pub fn len(&self) -> usize {
        self.chat.len() + self.embeddings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Add an entry, appending it to the backing file if there is one.
    pub fn record(&mut self, entry: ReplayEntry) -> Result<(), BackendError> {
        if let Some(path) = &self.path {
            let mut f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|e| BackendError::Replay(e.to_string()))?;
            let line = serde_json::to_string(&entry).expect("replay entry serializes");
            writeln!(f, "{line}").map_err(|e| BackendError::Replay(e.to_string()))?;
        }
        self.absorb(entry);
        Ok(())
    }

    pub fn chat(&self, key: &str) -> Option<&String> {
        self.chat.get(key)
    }

    pub fn embedding(&self, key: &str) -> Option<&Vec<f64>> {
        self.embeddings.get(key)
    }
}

/// Record/playback wrapper around a chat backend.
///
/// Entries are keyed by messages and parameters together, so repeated
/// sampling rounds with different seeds replay independently.
pub struct ReplayChat {
    inner: Option<Arc<dyn ChatBackend>>,
    store: Arc<Mutex<ReplayStore>>,
    mode: ReplayMode,
    model_id: String,
}

impl ReplayChat {
    pub fn playback(store: Arc<Mutex<ReplayStore>>, model_id: impl Into<String>) -> Self {
        Self {
            inner: None,
            store,
            mode: ReplayMode::Playback,
            model_id: model_id.into(),
        }
    }

    pub fn record(inner: Arc<dyn ChatBackend>, store: Arc<Mutex<ReplayStore>>) -> Self {
        let model_id = inner.model_id().to_string();
        Self {
            inner: Some(inner),
            store,
            mode: ReplayMode::Record,
            model_id,
        }
    }
}

impl ChatBackend for ReplayChat {
    fn chat_complete(&self, messages: &[ChatMessage], params: &GenerationParams) -> Result<String, BackendError> {
        let key = request_key(messages, Some(params));
        if let Some(r) = self.store.lock().expect("replay store poisoned").chat(&key) {
            return Ok(r.clone());
        }
        match (self.mode, &self.inner) {
            (ReplayMode::Record, Some(inner)) => {
                let response = inner.chat_complete(messages, params)?;
                self.store
                    .lock()
                    .expect("replay store poisoned")
                    .record(ReplayEntry::Chat {
                        key,
                        response: response.clone(),
                    })?;
                Ok(response)
            }
            _ => Err(BackendError::ReplayMiss(key)),
        }
    }

    fn model_id(&self) -> &str {
        &self.model_id
    }
}

/// Record/playback wrapper around an embedding backend.
pub struct ReplayEmbedder {
    inner: Option<Arc<dyn EmbeddingBackend>>,
    store: Arc<Mutex<ReplayStore>>,
    model_id: String,
}

impl ReplayEmbedder {
    pub fn playback(store: Arc<Mutex<ReplayStore>>, model_id: impl Into<String>) -> Self {
        Self {
            inner: None,
            store,
            model_id: model_id.into(),
        }
    }

    pub fn record(inner: Arc<dyn EmbeddingBackend>, store: Arc<Mutex<ReplayStore>>) -> Self {
        let model_id = inner.model_id().to_string();
        Self {
            inner: Some(inner),
            store,
            model_id,
        }
    }
}

impl EmbeddingBackend for ReplayEmbedder {
    fn embed_texts(&self, texts: &[String]) -> Result<Vec<EmbeddingVector<f64>>, BackendError> {
        if texts.is_empty() {
            return Err(BackendError::EmptyInput);
        }
        let keys: Vec<String> = texts.iter().map(|t| embedding_key(&self.model_id, t)).collect();
        let mut found: Vec<Option<Vec<f64>>> = {
            let store = self.store.lock().expect("replay store poisoned");
            keys.iter().map(|k| store.embedding(k).cloned()).collect()
        };
        let missing: Vec<usize> = (0..texts.len()).filter(|&i| found[i].is_none()).collect();
        if !missing.is_empty() {
            let Some(inner) = &self.inner else {
                return Err(BackendError::ReplayMiss(keys[missing[0]].clone()));
            };
            let batch: Vec<String> = missing.iter().map(|&i| texts[i].clone()).collect();
            let fresh = inner.embed_texts(&batch)?;
            let mut store = self.store.lock().expect("replay store poisoned");
            for (&i, v) in missing.iter().zip(fresh) {
                store.record(ReplayEntry::Embedding {
                    key: keys[i].clone(),
                    embedding: v.values.clone(),
                })?;
                found[i] = Some(v.values);
            }
        }
        let out = found
            .into_iter()
            .map(|v| EmbeddingVector::new(v.expect("filled above"), self.model_id.clone()))
            .collect::<Result<Vec<_>, _>>()?;
        check_uniform(&out)?;
        Ok(out)
    }

    fn model_id(&self) -> &str {
        &self.model_id
    }
}
