//! Chat-completion transport over HTTP.
//!
//! Each role reads its endpoint and model name from the environment:
//! `PLANFORGE_<ROLE>_URL` (falling back to `PLANFORGE_MODEL_URL`) and
//! `PLANFORGE_<ROLE>_MODEL` (falling back to `PLANFORGE_MODEL`). The bearer
//! credential comes from `PLANFORGE_API_KEY`.

use std::collections::BTreeMap;
use std::time::Duration;

use planforge_core::model::{ModelRequest, ModelRole, Transport, TransportError};
use serde_json::{json, Value};
use thiserror::Error;

#[derive(Debug, Error)]
#[error("no endpoint configured for the {0} role (set PLANFORGE_{1}_URL or PLANFORGE_MODEL_URL)")]
pub struct MissingEndpoint(pub &'static str, pub String);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoleEndpoint {
    pub url: String,
    pub model: String,
}

pub struct HttpTransport {
    agent: ureq::Agent,
    endpoints: BTreeMap<&'static str, RoleEndpoint>,
    api_key: Option<String>,
}

const DEFAULT_MODEL: &str = "default";

impl HttpTransport {
    pub fn new(endpoints: BTreeMap<&'static str, RoleEndpoint>, api_key: Option<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .build()
            .into();
        HttpTransport {
            agent,
            endpoints,
            api_key,
        }
    }

    /// Reads every role's endpoint from `var`. A role without one fails only
    /// when it is first called.
    pub fn from_env_with(var: impl Fn(&str) -> Option<String>) -> Self {
        let mut endpoints = BTreeMap::new();
        for role in ModelRole::ALL {
            let upper = role.as_str().to_uppercase();
            let url = var(&format!("PLANFORGE_{upper}_URL")).or_else(|| var("PLANFORGE_MODEL_URL"));
            let model = var(&format!("PLANFORGE_{upper}_MODEL"))
                .or_else(|| var("PLANFORGE_MODEL"))
                .unwrap_or_else(|| DEFAULT_MODEL.into());
            if let Some(url) = url {
                endpoints.insert(role.as_str(), RoleEndpoint { url, model });
            }
        }
        HttpTransport::new(endpoints, var("PLANFORGE_API_KEY"), Duration::from_secs(120))
    }

    pub fn from_env() -> Self {
        Self::from_env_with(|k| std::env::var(k).ok())
    }

    pub fn endpoint(&self, role: ModelRole) -> Result<&RoleEndpoint, MissingEndpoint> {
        self.endpoints
            .get(role.as_str())
            .ok_or_else(|| MissingEndpoint(role.as_str(), role.as_str().to_uppercase()))
    }
}

fn retryable_status(status: u16) -> bool {
    status == 408 || status == 429 || status >= 500
}

/// The first choice's message content, or a plain `text` field.
pub fn completion_text(body: &Value) -> Option<String> {
    body.pointer("/choices/0/message/content")
        .or_else(|| body.pointer("/choices/0/text"))
        .or_else(|| body.get("text"))
        .and_then(Value::as_str)
        .map(str::to_string)
}

impl Transport for HttpTransport {
    fn send(&self, request: &ModelRequest) -> Result<String, TransportError> {
        let endpoint = self
            .endpoint(request.role)
            .map_err(|e| TransportError::fatal(None, e.to_string()))?;
        let body = json!({
            "model": endpoint.model,
            "messages": [{"role": "user", "content": request.prompt_text}],
            "temperature": request.temperature,
        });
        let mut call = self.agent.post(&endpoint.url);
        if let Some(key) = &self.api_key {
            call = call.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = call
            .send_json(&body)
            .map_err(|e| TransportError::retryable(None, e.to_string()))?;
        let status = response.status().as_u16();
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| TransportError::retryable(Some(status), e.to_string()))?;
        if !(200..300).contains(&status) {
            let message = format!("HTTP {status}: {}", text.chars().take(200).collect::<String>());
            return Err(if retryable_status(status) {
                TransportError::retryable(Some(status), message)
            } else {
                TransportError::fatal(Some(status), message)
            });
        }
        let value: Value =
            serde_json::from_str(&text).map_err(|e| TransportError::fatal(Some(status), format!("bad response: {e}")))?;
        completion_text(&value).ok_or_else(|| TransportError::fatal(Some(status), "response holds no completion text"))
    }
}
