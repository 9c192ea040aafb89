//! Chat-completions provider for OpenAI-compatible endpoints.

use std::time::Duration;

use serde_json::{json, Value};

use super::provider::{Completion, Provider, ProviderError, ProviderRequest};

pub const ENV_API_KEY: &str = "REPROTOCOL_API_KEY";
pub const ENV_BASE_URL: &str = "REPROTOCOL_BASE_URL";
pub const ENV_MODEL: &str = "REPROTOCOL_MODEL";

pub struct HttpProvider {
    base_url: String,
    model: String,
    api_key: Option<String>,
    seed: Option<u64>,
    agent: ureq::Agent,
}

impl HttpProvider {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>, api_key: Option<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            base_url: base_url.into().trim_end_matches('/').to_owned(),
            model: model.into(),
            api_key,
            seed: None,
            agent,
        }
    }

    /// Reads base URL, model and key from the environment.
    pub fn from_env(timeout: Duration) -> Result<Self, ProviderError> {
        let base = std::env::var(ENV_BASE_URL).unwrap_or_else(|_| "https://api.openai.com/v1".into());
        let model = std::env::var(ENV_MODEL)
            .map_err(|_| ProviderError::Transport(format!("{ENV_MODEL} is not set")))?;
        Ok(Self::new(base, model, std::env::var(ENV_API_KEY).ok(), timeout))
    }

    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        self.seed = seed;
        self
    }
}

fn extract(body: &Value) -> Result<Completion, ProviderError> {
    let text = body
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| ProviderError::BadResponse("missing choices[0].message.content".into()))?;
    let usage = |k: &str| body.pointer(&format!("/usage/{k}")).and_then(Value::as_u64).unwrap_or(0);
    Ok(Completion {
        text: text.to_owned(),
        tokens_in: usage("prompt_tokens"),
        tokens_out: usage("completion_tokens"),
    })
}

impl Provider for HttpProvider {
    fn complete(&self, req: &ProviderRequest) -> Result<Completion, ProviderError> {
        let mut payload = json!({
            "model": self.model,
            "messages": [{"role": "user", "content": req.prompt}],
            "max_tokens": req.max_tokens,
            "temperature": 0,
        });
        if let Some(seed) = self.seed {
            payload["seed"] = json!(seed);
        }
        let mut call = self
            .agent
            .post(format!("{}/chat/completions", self.base_url))
            .header("content-type", "application/json");
        if let Some(key) = &self.api_key {
            call = call.header("authorization", format!("Bearer {key}"));
        }
        let mut resp = call
            .send(payload.to_string())
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        let status = resp.status();
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(ProviderError::Transport(format!("HTTP {status}")));
        }
        let value: Value =
            serde_json::from_str(&body).map_err(|e| ProviderError::BadResponse(e.to_string()))?;
        extract(&value)
    }

    fn descriptor(&self) -> String {
        format!("http:{}/{}", self.base_url, self.model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extracts_content_and_usage() {
        let body = json!({"choices":[{"message":{"content":"<x>1</x>"}}],"usage":{"prompt_tokens":12,"completion_tokens":3}});
        let c = extract(&body).unwrap();
        assert_eq!(c.text, "<x>1</x>");
        assert_eq!((c.tokens_in, c.tokens_out), (12, 3));
        assert!(extract(&json!({"choices":[]})).is_err());
    }
}
