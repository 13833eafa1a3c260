use std::time::Duration;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use super::{elicitation_messages, parse_elicitation, AgentError, AgentPolicy, ElicitTarget, Elicitation};
use crate::dialogue::{Message, PlayerView};
use crate::game::Action;

pub const ENDPOINT_VAR: &str = "GAMETALK_LLM_ENDPOINT";
pub const API_KEY_VAR: &str = "GAMETALK_LLM_API_KEY";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RemoteError {
    #[error("request timed out")]
    Timeout,
    #[error("http status {status}: {body}")]
    Http { status: u16, body: String },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("invalid remote config: {0}")]
    Config(String),
}

impl RemoteError {
    fn is_transient(&self) -> bool {
        match self {
            RemoteError::Timeout | RemoteError::Transport(_) => true,
            RemoteError::Http { status, .. } => *status == 429 || *status >= 500,
            RemoteError::MalformedResponse(_) | RemoteError::Config(_) => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    /// Base URL; requests go to `{endpoint}/v1/chat/completions`.
    pub endpoint: String,
    pub model: String,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    /// Retries after the first attempt.
    #[serde(default = "default_retries")]
    pub retry_budget: u32,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "default_backoff")]
    pub backoff_ms: u64,
    #[serde(skip)]
    pub api_key: Option<String>,
}

fn default_temperature() -> f64 {
    0.6
}
fn default_max_tokens() -> u32 {
    300
}
fn default_retries() -> u32 {
    3
}
fn default_timeout() -> f64 {
    60.0
}
fn default_backoff() -> u64 {
    500
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            temperature: default_temperature(),
            max_tokens: default_max_tokens(),
            retry_budget: default_retries(),
            timeout_secs: default_timeout(),
            backoff_ms: default_backoff(),
            api_key: None,
        }
    }

    /// Fills the endpoint (when empty) and the API key from the environment.
    pub fn with_env(mut self) -> Self {
        if self.endpoint.is_empty() {
            if let Ok(e) = std::env::var(ENDPOINT_VAR) {
                self.endpoint = e;
            }
        }
        if self.api_key.is_none() {
            self.api_key = std::env::var(API_KEY_VAR).ok().filter(|k| !k.is_empty());
        }
        self
    }

    pub fn validate(&self) -> Result<(), RemoteError> {
        if self.endpoint.is_empty() {
            return Err(RemoteError::Config(format!("no endpoint (set {ENDPOINT_VAR})")));
        }
        if !(self.temperature >= 0.0) {
            return Err(RemoteError::Config("temperature must be >= 0".into()));
        }
        if self.max_tokens == 0 {
            return Err(RemoteError::Config("max_tokens must be > 0".into()));
        }
        Ok(())
    }

    pub fn url(&self) -> String {
        format!("{}/v1/chat/completions", self.endpoint.trim_end_matches('/'))
    }
}

/// JSON body sent for `messages`. A pure function of its inputs.
pub fn request_body(config: &RemoteConfig, messages: &[Message]) -> Value {
    json!({
        "model": config.model,
        "messages": messages,
        "temperature": config.temperature,
        "max_tokens": config.max_tokens,
    })
}

fn send_once(agent: &ureq::Agent, config: &RemoteConfig, body: &Value) -> Result<String, RemoteError> {
    let mut req = agent.post(&config.url()).header("Content-Type", "application/json");
    if let Some(key) = &config.api_key {
        req = req.header("Authorization", &format!("Bearer {key}"));
    }
    let mut resp = req.send_json(body).map_err(|e| match e {
        ureq::Error::Timeout(_) => RemoteError::Timeout,
        other => RemoteError::Transport(other.to_string()),
    })?;
    let status = resp.status().as_u16();
    let text = resp
        .body_mut()
        .read_to_string()
        .map_err(|e| RemoteError::Transport(e.to_string()))?;
    if !(200..300).contains(&status) {
        return Err(RemoteError::Http { status, body: text });
    }
    let v: Value = serde_json::from_str(&text).map_err(|e| RemoteError::MalformedResponse(e.to_string()))?;
    v.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| RemoteError::MalformedResponse("missing choices[0].message.content".into()))
}

/// Sends one chat request, retrying transient failures with exponential
/// backoff. Returns the assistant content and the number of retries used.
pub fn remote_chat(config: &RemoteConfig, messages: &[Message]) -> Result<(String, u32), RemoteError> {
    config.validate()?;
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_secs_f64(config.timeout_secs)))
        .http_status_as_error(false)
        .build()
        .into();
    let body = request_body(config, messages);
    let mut attempt = 0;
    loop {
        match send_once(&agent, config, &body) {
            Ok(content) => return Ok((content, attempt)),
            Err(e) if e.is_transient() && attempt < config.retry_budget => {
                log::warn!("remote chat attempt {} failed: {e}; retrying", attempt + 1);
                std::thread::sleep(Duration::from_millis(config.backoff_ms << attempt.min(16)));
                attempt += 1;
            }
            Err(e) => return Err(e),
        }
    }
}

/// Agent backed by an OpenAI-compatible chat endpoint.
#[derive(Debug, Clone)]
pub struct RemoteAgent {
    pub config: RemoteConfig,
}

impl RemoteAgent {
    pub fn new(config: RemoteConfig) -> Self {
        Self { config }
    }
}

impl AgentPolicy for RemoteAgent {
    fn name(&self) -> String {
        format!("remote:{}", self.config.model)
    }

    fn act(&self, view: &PlayerView, _rng: &mut ChaCha8Rng) -> Result<String, AgentError> {
        remote_chat(&self.config, &view.messages)
            .map(|(content, _)| content)
            .map_err(|e| AgentError::Unavailable(e.to_string()))
    }

    fn elicit(&self, view: &PlayerView, target: ElicitTarget, candidates: &[Action]) -> Result<Elicitation, AgentError> {
        if candidates.is_empty() {
            return Err(AgentError::EmptyLegalSet);
        }
        let messages = elicitation_messages(view, target, candidates);
        let (reply, _) =
            remote_chat(&self.config, &messages).map_err(|e| AgentError::Unavailable(e.to_string()))?;
        Ok(parse_elicitation(&reply, candidates))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dialogue::Role;
    use std::io::{Read, Write};
    use std::net::TcpListener;
    use std::sync::mpsc;

    /// Serves the given (status, body) responses in order, one per connection,
    /// and reports every request body it read.
    fn serve(responses: Vec<(u16, String)>) -> (String, mpsc::Receiver<String>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for (status, body) in responses {
                let (mut sock, _) = listener.accept().unwrap();
                let mut buf = Vec::new();
                let mut chunk = [0u8; 4096];
                loop {
                    let n = sock.read(&mut chunk).unwrap();
                    buf.extend_from_slice(&chunk[..n]);
                    let text = String::from_utf8_lossy(&buf).to_string();
                    if let Some(h) = text.find("\r\n\r\n") {
                        let len = text[..h]
                            .lines()
                            .find_map(|l| {
                                let l = l.to_ascii_lowercase();
                                l.strip_prefix("content-length:").map(|v| v.trim().parse::<usize>().unwrap())
                            })
                            .unwrap_or(0);
                        if buf.len() >= h + 4 + len {
                            tx.send(text[h + 4..].to_string()).unwrap();
                            break;
                        }
                    }
                    if n == 0 {
                        break;
                    }
                }
                let reply = format!(
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                );
                sock.write_all(reply.as_bytes()).unwrap();
            }
        });
        (format!("http://{addr}"), rx)
    }

    fn ok(content: &str) -> (u16, String) {
        (200, json!({"choices": [{"message": {"role": "assistant", "content": content}}]}).to_string())
    }

    fn config(endpoint: String) -> RemoteConfig {
        let mut c = RemoteConfig::new(endpoint, "test-model");
        c.backoff_ms = 1;
        c.timeout_secs = 5.0;
        c.retry_budget = 2;
        c
    }

    fn msgs() -> Vec<Message> {
        vec![Message { role: Role::System, content: "hello".into() }]
    }

    #[test]
    fn happy_path_extracts_content() {
        let (url, rx) = serve(vec![ok("<think>a</think><play>rock</play>")]);
        let (content, retries) = remote_chat(&config(url), &msgs()).unwrap();
        assert_eq!(content, "<think>a</think><play>rock</play>");
        assert_eq!(retries, 0);
        let sent: Value = serde_json::from_str(&rx.recv().unwrap()).unwrap();
        assert_eq!(sent["model"], "test-model");
        assert_eq!(sent["max_tokens"], 300);
        assert_eq!(sent["messages"][0]["role"], "system");
    }

    #[test]
    fn transient_failures_are_retried() {
        let (url, _rx) = serve(vec![(503, "busy".into()), (500, "oops".into()), ok("fine")]);
        let (content, retries) = remote_chat(&config(url), &msgs()).unwrap();
        assert_eq!((content.as_str(), retries), ("fine", 2));
    }

    #[test]
    fn exhausted_budget_is_an_error() {
        let (url, _rx) = serve(vec![(503, "a".into()), (503, "b".into()), (503, "c".into())]);
        let err = remote_chat(&config(url), &msgs()).unwrap_err();
        assert!(matches!(err, RemoteError::Http { status: 503, .. }));
    }

    #[test]
    fn malformed_body_is_reported() {
        let (url, _rx) = serve(vec![(200, "{\"choices\": []}".into())]);
        let err = remote_chat(&config(url), &msgs()).unwrap_err();
        assert!(matches!(err, RemoteError::MalformedResponse(_)));
    }

    #[test]
    fn identical_inputs_give_identical_requests() {
        let mut c = RemoteConfig::new("http://x", "m");
        c.temperature = 0.0;
        assert_eq!(request_body(&c, &msgs()), request_body(&c, &msgs()));
    }
}
