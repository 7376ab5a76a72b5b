use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use log::{debug, warn};
use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{AnswerRecord, ReasonError, Result};

/// Environment variable holding the bearer token.
pub const API_KEY_ENV: &str = "G_REASONER_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmConfig {
    /// Full chat-completions URL.
    pub endpoint: Option<String>,
    pub model: String,
    pub temperature: f64,
    pub timeout_s: f64,
    pub max_attempts: u32,
    /// First retry delay; doubled on each further retry.
    pub backoff_ms: u64,
    pub max_in_flight: usize,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            endpoint: None,
            model: "gpt-4o-mini".into(),
            temperature: 0.0,
            timeout_s: 60.0,
            max_attempts: 3,
            backoff_ms: 500,
            max_in_flight: 4,
        }
    }
}

#[derive(Deserialize)]
struct Completion {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    content: Option<String>,
}

enum Failure {
    Retry(ReasonError),
    Fatal(ReasonError),
}

/// Reusable HTTP client bound to one endpoint configuration.
pub struct LlmClient {
    http: Client,
    endpoint: String,
    api_key: Option<String>,
    config: LlmConfig,
}

impl LlmClient {
    pub fn new(config: &LlmConfig) -> Result<Self> {
        let endpoint = config.endpoint.clone().filter(|e| !e.is_empty()).ok_or(ReasonError::NoEndpoint)?;
        let http = Client::builder()
            .timeout(Duration::from_secs_f64(config.timeout_s.max(0.001)))
            .build()
            .map_err(|e| ReasonError::Transport {
                attempts: 0,
                message: e.to_string(),
            })?;
        Ok(Self {
            http,
            endpoint,
            api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
            config: config.clone(),
        })
    }

    pub fn config(&self) -> &LlmConfig {
        &self.config
    }

    fn attempt(&self, prompt: &str, attempt: u32) -> std::result::Result<String, Failure> {
        let body = json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.config.temperature,
        });
        let mut req = self.http.post(&self.endpoint).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = match req.send() {
            Ok(r) => r,
            Err(e) if e.is_timeout() => return Err(Failure::Retry(ReasonError::Timeout { attempts: attempt })),
            Err(e) => {
                return Err(Failure::Retry(ReasonError::Transport {
                    attempts: attempt,
                    message: e.to_string(),
                }))
            }
        };
        let status = resp.status();
        let text = match resp.text() {
            Ok(t) => t,
            Err(e) if e.is_timeout() => return Err(Failure::Retry(ReasonError::Timeout { attempts: attempt })),
            Err(e) => {
                return Err(Failure::Retry(ReasonError::Transport {
                    attempts: attempt,
                    message: e.to_string(),
                }))
            }
        };
        if !status.is_success() {
            let err = ReasonError::Status {
                status: status.as_u16(),
                attempts: attempt,
                body: text.chars().take(200).collect(),
            };
            let transient = status.is_server_error() || status == StatusCode::TOO_MANY_REQUESTS;
            return Err(if transient { Failure::Retry(err) } else { Failure::Fatal(err) });
        }
        let parsed: Completion = serde_json::from_str(&text).map_err(|e| Failure::Fatal(ReasonError::Malformed(e.to_string())))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| Failure::Fatal(ReasonError::Malformed("no choices[0].message.content".into())))
    }

    /// One completion for `prompt`, retrying transient failures with exponential backoff.
    pub fn complete(&self, prompt: &str) -> Result<String> {
        let attempts = self.config.max_attempts.max(1);
        let mut delay = Duration::from_millis(self.config.backoff_ms);
        for attempt in 1..=attempts {
            match self.attempt(prompt, attempt) {
                Ok(text) => return Ok(text),
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Retry(e)) if attempt == attempts => return Err(e),
                Err(Failure::Retry(e)) => {
                    warn!("LLM attempt {attempt}/{attempts} failed: {e}; retrying in {delay:?}");
                    thread::sleep(delay);
                    delay *= 2;
                }
            }
        }
        unreachable!("loop returns on the last attempt")
    }
}

/// Sends `prompt` to the configured chat-completions endpoint.
pub fn call_llm(prompt: &str, config: &LlmConfig) -> Result<String> {
    LlmClient::new(config)?.complete(prompt)
}

/// Answers `(query_id, prompt)` pairs with at most `max_in_flight` requests
/// outstanding. Results come back in input order.
pub fn answer_all(prompts: &[(String, String)], client: &LlmClient) -> Vec<Result<AnswerRecord>> {
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<AnswerRecord>>>> = prompts.iter().map(|_| Mutex::new(None)).collect();
    let workers = client.config.max_in_flight.clamp(1, prompts.len().max(1));
    thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some((qid, prompt)) = prompts.get(i) else { break };
                let start = Instant::now();
                let res = client
                    .complete(prompt)
                    .map(|raw| AnswerRecord::new(qid.clone(), raw, start.elapsed().as_secs_f64()));
                debug!("query {qid} answered in {:.2}s", start.elapsed().as_secs_f64());
                *slots[i].lock().expect("slot lock") = Some(res);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().expect("slot lock").expect("every prompt is claimed"))
        .collect()
}
