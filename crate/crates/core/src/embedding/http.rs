use std::time::Duration;

use serde::{Deserialize, Serialize};
use tracing::warn;

use super::{Embedder, Vector};
use crate::error::{Error, Result};

pub const EMBED_URL_ENV: &str = "PATHTRACK_EMBED_URL";
pub const EMBED_KEY_ENV: &str = "PATHTRACK_EMBED_API_KEY";

const BATCH_SIZE: usize = 64;
const MAX_RETRIES: usize = 2;

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
}

/// Remote embedder speaking `POST {texts: [..]}` → `{vectors: [[..]]}`.
#[derive(Debug)]
pub struct HttpEmbedder {
    client: reqwest::blocking::Client,
    url: String,
    token: Option<String>,
    dim: usize,
}

impl HttpEmbedder {
    pub fn new(url: impl Into<String>, token: Option<String>, dim: usize) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(60))
            .build()
            .map_err(|e| Error::Config(format!("http client: {e}")))?;
        Ok(HttpEmbedder {
            client,
            url: url.into(),
            token,
            dim,
        })
    }

    /// Reads the endpoint from `PATHTRACK_EMBED_URL` and an optional bearer
    /// token from `PATHTRACK_EMBED_API_KEY`.
    pub fn from_env(dim: usize) -> Result<Self> {
        let url = std::env::var(EMBED_URL_ENV)
            .map_err(|_| Error::MissingEnv(EMBED_URL_ENV.to_string()))?;
        let token = std::env::var(EMBED_KEY_ENV).ok().filter(|t| !t.is_empty());
        HttpEmbedder::new(url, token, dim)
    }

    fn post(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        let mut req = self.client.post(&self.url).json(&EmbedRequest { texts });
        if let Some(token) = &self.token {
            req = req.bearer_auth(token);
        }
        let backend_err = |message: String, retryable: bool| Error::Backend {
            backend: "http-embedder".into(),
            message,
            retryable,
        };
        let resp = req.send().map_err(|e| backend_err(e.to_string(), true))?;
        let status = resp.status();
        if !status.is_success() {
            let body = resp.text().unwrap_or_default();
            let retryable = status.is_server_error() || status.as_u16() == 429;
            return Err(backend_err(format!("status {status}: {body}"), retryable));
        }
        let parsed: EmbedResponse = resp
            .json()
            .map_err(|e| backend_err(format!("bad response body: {e}"), false))?;
        Ok(parsed.vectors)
    }

    fn post_with_retry(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        let mut attempt = 0;
        loop {
            match self.post(texts) {
                Err(e) if e.is_retryable() && attempt < MAX_RETRIES => {
                    attempt += 1;
                    warn!(error = %e, attempt, "embedding request failed, retrying");
                }
                other => return other,
            }
        }
    }
}

impl Embedder for HttpEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vector>> {
        let mut out = Vec::with_capacity(texts.len());
        for batch in texts.chunks(BATCH_SIZE) {
            let vectors = self.post_with_retry(batch)?;
            if vectors.len() != batch.len() {
                return Err(Error::Backend {
                    backend: "http-embedder".into(),
                    message: format!("sent {} texts, got {} vectors", batch.len(), vectors.len()),
                    retryable: false,
                });
            }
            for raw in vectors {
                if raw.len() != self.dim {
                    return Err(Error::DimensionMismatch {
                        expected: self.dim,
                        actual: raw.len(),
                    });
                }
                out.push(Vector::new(raw)?);
            }
        }
        Ok(out)
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn id(&self) -> String {
        format!("http/{}/{}", self.url, self.dim)
    }
}
