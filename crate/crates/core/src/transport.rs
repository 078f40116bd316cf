//! Outbound connectors: chat-completion endpoints for LLM annotators and the
//! submit/poll contract for external human-annotation platforms.

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// A single-turn chat request with an optional function-call schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub system: String,
    pub user: String,
    pub tool: Option<ToolSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub name: String,
    pub description: String,
    /// JSON schema of the arguments object.
    pub parameters: serde_json::Value,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub content: Option<String>,
    /// Raw JSON arguments of the first function call, if any.
    pub tool_arguments: Option<String>,
    pub usage: Option<TokenUsage>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

pub trait ChatTransport: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse>;
}

/// Opaque handle returned by an external platform on submit.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DispatchToken(pub String);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DispatchJob {
    pub batch_id: String,
    pub class_names: Vec<String>,
    pub items: Vec<DispatchItem>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DispatchItem {
    pub sample_id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum PollStatus {
    Pending,
    /// Labels as class names keyed by sample id.
    Completed { labels: Vec<(String, String)> },
}

pub trait DispatchClient: Send + Sync {
    fn submit(&self, job: &DispatchJob) -> Result<DispatchToken>;
    fn poll(&self, token: &DispatchToken) -> Result<PollStatus>;
}

#[cfg(feature = "http")]
pub use http::{HttpChatTransport, HttpDispatchClient};

#[cfg(feature = "http")]
mod http {
    use std::time::Duration;

    use serde_json::{json, Value};

    use super::*;
    use crate::error::Error;

    fn client(timeout: Duration) -> Result<reqwest::blocking::Client> {
        reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| Error::Transport(e.to_string()))
    }

    /// OpenAI-compatible `/chat/completions` client. The bearer token is read
    /// from the named environment variable on every call.
    pub struct HttpChatTransport {
        url: String,
        token_env: String,
        client: reqwest::blocking::Client,
    }

    impl HttpChatTransport {
        pub fn new(url: impl Into<String>, token_env: impl Into<String>) -> Result<Self> {
            Ok(HttpChatTransport { url: url.into(), token_env: token_env.into(), client: client(Duration::from_secs(60))? })
        }

        pub fn request_body(request: &ChatRequest) -> Value {
            let mut body = json!({
                "model": request.model,
                "temperature": 0,
                "messages": [
                    {"role": "system", "content": request.system},
                    {"role": "user", "content": request.user},
                ],
            });
            if let Some(tool) = &request.tool {
                body["tools"] = json!([{
                    "type": "function",
                    "function": {"name": tool.name, "description": tool.description, "parameters": tool.parameters},
                }]);
                body["tool_choice"] = json!({"type": "function", "function": {"name": tool.name}});
            }
            body
        }

        pub fn parse_body(body: &Value) -> ChatResponse {
            let message = &body["choices"][0]["message"];
            let usage = match (body["usage"]["prompt_tokens"].as_u64(), body["usage"]["completion_tokens"].as_u64()) {
                (Some(p), Some(c)) => Some(TokenUsage { prompt_tokens: p, completion_tokens: c }),
                _ => None,
            };
            ChatResponse {
                content: message["content"].as_str().map(str::to_string),
                tool_arguments: message["tool_calls"][0]["function"]["arguments"].as_str().map(str::to_string),
                usage,
            }
        }
    }

    impl ChatTransport for HttpChatTransport {
        fn complete(&self, request: &ChatRequest) -> Result<ChatResponse> {
            let mut req = self.client.post(&self.url).json(&Self::request_body(request));
            if let Ok(token) = std::env::var(&self.token_env) {
                req = req.bearer_auth(token);
            }
            let resp = req.send().map_err(|e| Error::Transport(e.to_string()))?;
            let status = resp.status();
            if !status.is_success() {
                return Err(Error::Transport(format!("HTTP {status} from {}", self.url)));
            }
            let body: Value = resp.json().map_err(|e| Error::Transport(e.to_string()))?;
            Ok(Self::parse_body(&body))
        }
    }

    /// Two-endpoint dispatch contract: `POST {base}/submit` returning
    /// `{"token": ...}` and `GET {base}/poll/{token}` returning a
    /// [`PollStatus`].
    pub struct HttpDispatchClient {
        base: String,
        client: reqwest::blocking::Client,
    }

    impl HttpDispatchClient {
        pub fn new(base: impl Into<String>) -> Result<Self> {
            Ok(HttpDispatchClient {
                base: base.into().trim_end_matches('/').to_string(),
                client: client(Duration::from_secs(30))?,
            })
        }
    }

    impl DispatchClient for HttpDispatchClient {
        fn submit(&self, job: &DispatchJob) -> Result<DispatchToken> {
            let resp = self
                .client
                .post(format!("{}/submit", self.base))
                .json(job)
                .send()
                .map_err(|e| Error::Transport(e.to_string()))?;
            if !resp.status().is_success() {
                return Err(Error::Transport(format!("submit failed: HTTP {}", resp.status())));
            }
            let body: Value = resp.json().map_err(|e| Error::Transport(e.to_string()))?;
            body["token"]
                .as_str()
                .map(|t| DispatchToken(t.to_string()))
                .ok_or_else(|| Error::Transport("submit response lacks a token".into()))
        }

        fn poll(&self, token: &DispatchToken) -> Result<PollStatus> {
            let resp = self
                .client
                .get(format!("{}/poll/{}", self.base, token.0))
                .send()
                .map_err(|e| Error::Transport(e.to_string()))?;
            if resp.status() == reqwest::StatusCode::NOT_FOUND {
                return Err(Error::UnknownToken(token.0.clone()));
            }
            if !resp.status().is_success() {
                return Err(Error::Transport(format!("poll failed: HTTP {}", resp.status())));
            }
            resp.json().map_err(|e| Error::Transport(e.to_string()))
        }
    }

}
