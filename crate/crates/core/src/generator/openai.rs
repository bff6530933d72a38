use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::backend::{ChatMessage, ChatRequest, Completion, LlmBackend, Usage};
use crate::error::{Error, Result};

pub const LLM_KEY_ENV: &str = "PATHTRACK_LLM_API_KEY";
pub const DEFAULT_BASE_URL: &str = "https://api.openai.com/v1";
pub const DEFAULT_MODEL: &str = "gpt-4o-mini";

#[derive(Serialize)]
struct ChatBody<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct Choice {
    message: ResponseMessage,
}

#[derive(Deserialize)]
struct ResponseMessage {
    content: Option<String>,
}

/// Client for OpenAI-compatible `/chat/completions` endpoints.
#[derive(Debug)]
pub struct OpenAiBackend {
    client: reqwest::blocking::Client,
    base_url: String,
    api_key: String,
    model: String,
}

impl OpenAiBackend {
    pub fn new(
        base_url: impl Into<String>,
        api_key: impl Into<String>,
        model: impl Into<String>,
    ) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| Error::Config(format!("http client: {e}")))?;
        Ok(OpenAiBackend {
            client,
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key: api_key.into(),
            model: model.into(),
        })
    }

    /// Builds a client whose key comes from `PATHTRACK_LLM_API_KEY`.
    pub fn from_env(base_url: &str, model: &str) -> Result<Self> {
        let key = std::env::var(LLM_KEY_ENV)
            .ok()
            .filter(|k| !k.is_empty())
            .ok_or_else(|| Error::MissingEnv(LLM_KEY_ENV.to_string()))?;
        OpenAiBackend::new(base_url, key, model)
    }

    fn err(&self, message: String, retryable: bool) -> Error {
        Error::Backend {
            backend: format!("openai:{}", self.model),
            message,
            retryable,
        }
    }
}

impl LlmBackend for OpenAiBackend {
    fn complete(&self, request: &ChatRequest) -> Result<Completion> {
        let body = ChatBody {
            model: &self.model,
            messages: &request.messages,
            temperature: 0.0,
        };
        let resp = self
            .client
            .post(format!("{}/chat/completions", self.base_url))
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .map_err(|e| self.err(e.to_string(), true))?;
        let status = resp.status();
        if !status.is_success() {
            let text = resp.text().unwrap_or_default();
            let retryable = status.is_server_error() || status.as_u16() == 429;
            return Err(self.err(format!("status {status}: {text}"), retryable));
        }
        let parsed: ChatResponse = resp
            .json()
            .map_err(|e| self.err(format!("bad response body: {e}"), false))?;
        let text = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| self.err("response has no message content".into(), true))?;
        Ok(Completion {
            text,
            usage: parsed.usage,
        })
    }

    fn name(&self) -> String {
        format!("openai:{}", self.model)
    }
}
