//! Model backend abstraction.
//!
//! One HTTP client speaking the common chat-completions wire shape covers
//! hosted and local servers alike; a deterministic scripted mock covers
//! offline tests. Models are swapped by configuration, never by code.

mod http;
mod mock;

pub use http::HttpBackend;
pub use mock::{MockBackend, MockOutcome};

use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::SystemTime;

use async_trait::async_trait;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BackendError {
    #[error("unknown backend {0:?}")]
    UnknownBackend(String),
    #[error("backend call timed out after {ms} ms")]
    Timeout { ms: u64 },
    #[error("upstream returned HTTP status {0}")]
    HttpStatus(u16),
    #[error("malformed upstream reply: {0}")]
    MalformedUpstreamReply(String),
    #[error("no scripted reply matched the request")]
    MockUnmatched,
    #[error("transport error: {0}")]
    Transport(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

/// One chat completion request.
#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub model_name: String,
    pub system_prompt: String,
    pub user_prompt: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl ChatRequest {
    pub fn new(
        model_name: impl Into<String>,
        system_prompt: impl Into<String>,
        user_prompt: impl Into<String>,
        temperature: f64,
        max_tokens: u32,
    ) -> Result<Self, BackendError> {
        let req = Self {
            model_name: model_name.into(),
            system_prompt: system_prompt.into(),
            user_prompt: user_prompt.into(),
            temperature,
            max_tokens,
        };
        if req.system_prompt.is_empty() || req.user_prompt.is_empty() {
            return Err(BackendError::InvalidRequest("prompts must be non-empty".into()));
        }
        if req.max_tokens == 0 {
            return Err(BackendError::InvalidRequest("max_tokens must be > 0".into()));
        }
        Ok(req)
    }
}

/// A chat-completion capable model endpoint. Implementations are shareable
/// handles; concurrent `complete` calls are permitted.
#[async_trait]
pub trait Backend: Send + Sync {
    async fn complete(&self, request: &ChatRequest) -> Result<String, BackendError>;
}

/// Named backends plus per-backend last-error bookkeeping. Lookups of
/// unregistered ids fail loudly.
#[derive(Default)]
pub struct BackendPool {
    backends: HashMap<String, Arc<dyn Backend>>,
    health: Mutex<HashMap<String, SystemTime>>,
}

impl std::fmt::Debug for BackendPool {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BackendPool")
            .field("backends", &self.ids())
            .finish()
    }
}

impl BackendPool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, id: impl Into<String>, backend: Arc<dyn Backend>) {
        self.backends.insert(id.into(), backend);
    }

    pub fn contains(&self, id: &str) -> bool {
        self.backends.contains_key(id)
    }

    pub fn ids(&self) -> Vec<&str> {
        let mut ids: Vec<&str> = self.backends.keys().map(String::as_str).collect();
        ids.sort_unstable();
        ids
    }

    pub fn get(&self, id: &str) -> Result<Arc<dyn Backend>, BackendError> {
        self.backends
            .get(id)
            .cloned()
            .ok_or_else(|| BackendError::UnknownBackend(id.to_string()))
    }

    /// Sends `request` to the named backend and records the failure time on
    /// error.
    pub async fn complete(
        &self,
        backend_id: &str,
        request: &ChatRequest,
    ) -> Result<String, BackendError> {
        let backend = self.get(backend_id)?;
        let result = backend.complete(request).await;
        if result.is_err() {
            self.health
                .lock()
                .expect("health lock")
                .insert(backend_id.to_string(), SystemTime::now());
        }
        result
    }

    /// Timestamp of the most recent error observed for a backend, if any.
    pub fn last_error(&self, backend_id: &str) -> Option<SystemTime> {
        self.health
            .lock()
            .expect("health lock")
            .get(backend_id)
            .copied()
    }
}
