//! HTTP backend speaking the de-facto chat-completions wire shape:
//! `POST <base_url>/chat/completions` with a system + user message pair,
//! reading `choices[0].message.content` back.

use std::sync::Arc;

use async_trait::async_trait;
use serde_json::json;
use tokio::sync::Semaphore;

use super::{Backend, BackendError, ChatRequest};

pub struct HttpBackend {
    base_url: String,
    api_key: Option<String>,
    client: reqwest::Client,
    limiter: Option<Arc<Semaphore>>,
}

impl HttpBackend {
    /// `base_url` is the API root (e.g. `https://host/v1`); the
    /// chat-completions route is appended. `max_concurrency` bounds in-flight
    /// requests against this backend when set.
    pub fn new(
        base_url: impl Into<String>,
        api_key: Option<String>,
        max_concurrency: Option<usize>,
    ) -> Self {
        Self {
            base_url: base_url.into(),
            api_key,
            client: reqwest::Client::new(),
            limiter: max_concurrency.map(|n| Arc::new(Semaphore::new(n.max(1)))),
        }
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.base_url.trim_end_matches('/'))
    }
}

#[async_trait]
impl Backend for HttpBackend {
    async fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        let _permit = match &self.limiter {
            Some(semaphore) => Some(
                semaphore
                    .clone()
                    .acquire_owned()
                    .await
                    .expect("limiter is never closed"),
            ),
            None => None,
        };

        // Prompts pass through byte-identical; only the envelope is ours.
        let body = json!({
            "model": request.model_name,
            "messages": [
                {"role": "system", "content": request.system_prompt},
                {"role": "user", "content": request.user_prompt},
            ],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });

        let mut http_request = self.client.post(self.endpoint()).json(&body);
        if let Some(key) = &self.api_key {
            http_request = http_request.header("Authorization", format!("Bearer {key}"));
        }

        let response = http_request
            .send()
            .await
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = response.status();
        if !status.is_success() {
            return Err(BackendError::HttpStatus(status.as_u16()));
        }

        let payload: serde_json::Value = response
            .json()
            .await
            .map_err(|e| BackendError::MalformedUpstreamReply(e.to_string()))?;
        payload
            .pointer("/choices/0/message/content")
            .and_then(|v| v.as_str())
            .map(str::to_string)
            .ok_or_else(|| {
                BackendError::MalformedUpstreamReply(
                    "missing choices[0].message.content".to_string(),
                )
            })
    }
}
