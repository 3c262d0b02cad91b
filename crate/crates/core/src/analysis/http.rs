//! Chat-completions HTTP backend.
//!
//! Speaks the common chat-completions wire shape: a JSON body with a
//! model name and a message list whose user content is an array of text
//! and `data:` image parts. Auth comes from an environment variable so
//! tokens never live in config files; request/response bodies can be
//! audited to a log file with image payloads truncated.

use super::{AnalysisError, BackendConfig, ContentPart};
use serde_json::{json, Value};
use std::io::Write;
use std::time::Duration;

/// Anything that can turn a prompt into model text. The production
/// implementation is [`HttpChatBackend`]; tests substitute canned
/// responders.
pub trait ChatBackend {
    fn complete(&self, system: &str, user: &[ContentPart]) -> Result<String, AnalysisError>;
}

pub struct HttpChatBackend {
    client: reqwest::blocking::Client,
    cfg: BackendConfig,
    token: Option<String>,
}

impl HttpChatBackend {
    pub fn new(cfg: BackendConfig) -> Result<Self, AnalysisError> {
        let token = if cfg.auth_token_env.is_empty() {
            None
        } else {
            std::env::var(&cfg.auth_token_env).ok()
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(cfg.timeout_secs))
            .build()
            .map_err(|e| AnalysisError::Transport {
                attempts: 0,
                message: e.to_string(),
            })?;
        Ok(HttpChatBackend { client, cfg, token })
    }

    fn request_body(&self, system: &str, user: &[ContentPart]) -> Value {
        let parts: Vec<Value> = user
            .iter()
            .map(|p| match p {
                ContentPart::Text(t) => json!({"type": "text", "text": t}),
                ContentPart::ImagePngBase64(b64) => json!({
                    "type": "image_url",
                    "image_url": {"url": format!("data:image/png;base64,{b64}")}
                }),
            })
            .collect();
        let mut messages = Vec::new();
        if !system.is_empty() {
            messages.push(json!({"role": "system", "content": system}));
        }
        messages.push(json!({"role": "user", "content": parts}));
        json!({
            "model": self.cfg.model,
            "messages": messages,
        })
    }

    fn audit(&self, request: &Value, response: &str) {
        let Some(path) = &self.cfg.audit_log else {
            return;
        };
        // The bearer token is only ever a header, so bodies are safe to
        // log; image payloads are truncated to keep the file readable.
        let mut redacted = request.clone();
        redact_images(&mut redacted);
        let line = json!({
            "endpoint": self.cfg.endpoint,
            "request": redacted,
            "response": response,
        });
        if let Ok(mut f) = std::fs::OpenOptions::new().create(true).append(true).open(path) {
            let _ = writeln!(f, "{line}");
        }
    }
}

fn redact_images(v: &mut Value) {
    match v {
        Value::Object(map) => {
            if let Some(Value::String(url)) = map.get_mut("url") {
                if url.starts_with("data:image/") && url.len() > 64 {
                    *url = format!("{}... ({} bytes truncated)", &url[..64], url.len() - 64);
                }
            }
            for val in map.values_mut() {
                redact_images(val);
            }
        }
        Value::Array(items) => items.iter_mut().for_each(redact_images),
        _ => {}
    }
}

impl ChatBackend for HttpChatBackend {
    fn complete(&self, system: &str, user: &[ContentPart]) -> Result<String, AnalysisError> {
        let body = self.request_body(system, user);
        let attempts = self.cfg.retries.max(0) + 1;
        let mut last_err = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(200 * attempt as u64));
            }
            let mut req = self.client.post(&self.cfg.endpoint).json(&body);
            if let Some(token) = &self.token {
                req = req.bearer_auth(token);
            }
            match req.send().and_then(|r| r.error_for_status()) {
                Ok(resp) => {
                    let value: Value = resp.json().map_err(|e| AnalysisError::Transport {
                        attempts: attempt + 1,
                        message: format!("malformed response body: {e}"),
                    })?;
                    let text = extract_content(&value)?;
                    self.audit(&body, &text);
                    return Ok(text);
                }
                Err(e) => last_err = e.to_string(),
            }
        }
        Err(AnalysisError::Transport {
            attempts,
            message: last_err,
        })
    }
}

/// Pull the assistant text out of a chat-completions response; content
/// may be a plain string or an array of typed parts.
fn extract_content(value: &Value) -> Result<String, AnalysisError> {
    let content = value
        .pointer("/choices/0/message/content")
        .ok_or(AnalysisError::EmptyResponse)?;
    let text = match content {
        Value::String(s) => s.clone(),
        Value::Array(parts) => parts
            .iter()
            .filter_map(|p| p.pointer("/text").and_then(Value::as_str))
            .collect::<Vec<_>>()
            .join(""),
        _ => String::new(),
    };
    if text.trim().is_empty() {
        return Err(AnalysisError::EmptyResponse);
    }
    Ok(text)
}
