//! OpenAI-compatible chat-completions backend.
//!
//! Speaks the standard `/chat/completions` JSON wire format against a
//! configurable endpoint and model. The API key comes from an environment
//! variable, never from configuration files. Token counts are taken from
//! the provider's `usage` metadata.

use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use super::{BackendResponse, CompletionBackend, GenerationParams, LlmError};

pub struct HttpBackend {
    endpoint: String,
    model: String,
    api_key: String,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    /// `endpoint` is the API base, e.g. `https://api.openai.com/v1`.
    /// The key is read from `key_env` at construction time.
    pub fn new(endpoint: &str, model: &str, key_env: &str) -> Result<Self, LlmError> {
        let api_key = std::env::var(key_env).map_err(|_| LlmError::MissingApiKey {
            env: key_env.to_string(),
        })?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| LlmError::Backend {
                reason: e.to_string(),
                transient: false,
            })?;
        Ok(Self {
            endpoint: endpoint.trim_end_matches('/').to_string(),
            model: model.to_string(),
            api_key,
            client,
        })
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    content: Option<String>,
}

#[derive(Deserialize, Default)]
struct Usage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

impl CompletionBackend for HttpBackend {
    fn id(&self) -> &'static str {
        "http"
    }

    fn complete(
        &self,
        prompt: &str,
        params: &GenerationParams,
    ) -> Result<BackendResponse, LlmError> {
        let mut body = json!({
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": params.temperature,
        });
        if let Some(max_tokens) = params.max_completion_tokens {
            body["max_tokens"] = json!(max_tokens);
        }
        let response = self
            .client
            .post(format!("{}/chat/completions", self.endpoint))
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .map_err(|e| LlmError::Backend {
                reason: e.to_string(),
                transient: true,
            })?;

        let status = response.status();
        if !status.is_success() {
            let text = response.text().unwrap_or_default();
            // Rate limits and server errors are worth retrying; the rest are not.
            let transient = status.as_u16() == 429 || status.is_server_error();
            return Err(LlmError::Backend {
                reason: format!("http {status}: {text}"),
                transient,
            });
        }

        let parsed: ChatResponse = response.json().map_err(|e| LlmError::Backend {
            reason: format!("malformed completion response: {e}"),
            transient: false,
        })?;
        let text = parsed
            .choices
            .first()
            .and_then(|c| c.message.content.clone())
            .ok_or_else(|| LlmError::Backend {
                reason: "completion response has no choices".into(),
                transient: false,
            })?;
        let usage = parsed.usage.unwrap_or_default();
        Ok(BackendResponse {
            text,
            input_tokens: usage.prompt_tokens,
            output_tokens: usage.completion_tokens,
        })
    }
}
