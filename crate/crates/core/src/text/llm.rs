//! Description providers and the cached fetch path.

use std::collections::HashSet;
use std::sync::mpsc;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::cache::{now_rfc3339, DescriptionCache, DescriptionKey, DescriptionRecord};
use super::http::{agent, retryable_status, with_backoff, Attempt};
use super::prompts::PromptId;
use crate::error::{Result, TrexError};

/// Everything a provider may use to describe one molecule or pair.
#[derive(Debug, Clone)]
pub struct DescriptionRequest {
    pub prompt_id: PromptId,
    pub key: DescriptionKey,
    pub names: Vec<String>,
    pub prompt: String,
}

pub trait DescriptionProvider: Send + Sync {
    fn tag(&self) -> String;
    fn complete(&self, req: &DescriptionRequest) -> Result<String>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmConfig {
    pub url: String,
    pub model: String,
    #[serde(skip)]
    pub token: Option<String>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub frequency_penalty: f64,
    pub presence_penalty: f64,
    pub max_attempts: usize,
    pub backoff_ms: u64,
    pub timeout_s: u64,
}

impl Default for LlmConfig {
    fn default() -> Self {
        LlmConfig {
            url: String::new(),
            model: String::new(),
            token: None,
            temperature: 0.7,
            max_tokens: 512,
            frequency_penalty: 0.0,
            presence_penalty: 0.0,
            max_attempts: 5,
            backoff_ms: 500,
            timeout_s: 120,
        }
    }
}

impl LlmConfig {
    /// Reads `TREX_LLM_URL`, `TREX_LLM_MODEL` and `TREX_LLM_TOKEN`.
    pub fn from_env() -> Result<Self> {
        let url = std::env::var("TREX_LLM_URL").map_err(|_| TrexError::Config("TREX_LLM_URL is not set".into()))?;
        let model = std::env::var("TREX_LLM_MODEL").map_err(|_| TrexError::Config("TREX_LLM_MODEL is not set".into()))?;
        Ok(LlmConfig {
            url,
            model,
            token: std::env::var("TREX_LLM_TOKEN").ok(),
            ..Default::default()
        })
    }
}

/// Chat-completion HTTP endpoint (OpenAI-compatible request/response).
pub struct ChatCompletionProvider {
    cfg: LlmConfig,
    agent: ureq::Agent,
}

impl ChatCompletionProvider {
    pub fn new(cfg: LlmConfig) -> Self {
        let agent = agent(Duration::from_secs(cfg.timeout_s));
        ChatCompletionProvider { cfg, agent }
    }

    fn body(&self, prompt: &str) -> serde_json::Value {
        json!({
            "model": self.cfg.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.cfg.temperature,
            "max_tokens": self.cfg.max_tokens,
            "frequency_penalty": self.cfg.frequency_penalty,
            "presence_penalty": self.cfg.presence_penalty,
        })
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    content: Option<String>,
}

impl DescriptionProvider for ChatCompletionProvider {
    fn tag(&self) -> String {
        format!("chat:{}", self.cfg.model)
    }

    fn complete(&self, req: &DescriptionRequest) -> Result<String> {
        let body = self.body(&req.prompt);
        let text = with_backoff(self.cfg.max_attempts, Duration::from_millis(self.cfg.backoff_ms), |_| {
            let mut r = self.agent.post(&self.cfg.url);
            if let Some(tok) = &self.cfg.token {
                r = r.header("Authorization", &format!("Bearer {tok}"));
            }
            match r.send_json(&body) {
                Err(e) => Attempt::Retry(e.to_string()),
                Ok(mut resp) => {
                    let status = resp.status().as_u16();
                    if retryable_status(status) {
                        return Attempt::Retry(format!("HTTP {status}"));
                    }
                    if !(200..300).contains(&status) {
                        return Attempt::Fatal(format!("HTTP {status}"));
                    }
                    match resp.body_mut().read_json::<ChatResponse>() {
                        Ok(c) => Attempt::Done(
                            c.choices
                                .into_iter()
                                .next()
                                .and_then(|c| c.message.content)
                                .unwrap_or_default(),
                        ),
                        Err(e) => Attempt::Fatal(format!("unreadable response: {e}")),
                    }
                }
            }
        })
        .map_err(TrexError::ProviderError)?;
        Ok(text)
    }
}

fn commit(req: &DescriptionRequest, text: String, tag: String) -> Result<DescriptionRecord> {
    if text.trim().is_empty() {
        return Err(TrexError::ProviderError(format!("empty description for `{}`", req.key)));
    }
    Ok(DescriptionRecord {
        key: req.key.clone(),
        iupac_names: req.names.clone(),
        prompt_id: req.prompt_id,
        text,
        provider: tag,
        created_at: now_rfc3339(),
    })
}

/// Cache hit returns the stored record; a miss makes one provider call and
/// persists the result.
pub fn fetch_description(
    req: &DescriptionRequest,
    provider: &dyn DescriptionProvider,
    cache: &mut DescriptionCache,
) -> Result<DescriptionRecord> {
    if let Some(r) = cache.get(req.prompt_id, &req.key) {
        return Ok(r.clone());
    }
    let record = commit(req, provider.complete(req)?, provider.tag())?;
    cache.insert(record.clone())?;
    Ok(record)
}

/// Fetches many descriptions with at most `in_flight` concurrent provider
/// calls. Results are written to the cache by the calling thread only.
/// Duplicate keys are requested once.
pub fn fetch_all(
    requests: &[DescriptionRequest],
    provider: &dyn DescriptionProvider,
    cache: &mut DescriptionCache,
    in_flight: usize,
) -> Vec<Result<DescriptionRecord>> {
    let mut seen = HashSet::new();
    let todo: Vec<&DescriptionRequest> = requests
        .iter()
        .filter(|r| cache.get(r.prompt_id, &r.key).is_none())
        .filter(|r| seen.insert((r.prompt_id, r.key.clone())))
        .collect();
    let mut failures: Vec<(PromptId, DescriptionKey, String)> = Vec::new();
    if !todo.is_empty() {
        let queue = Mutex::new(todo.into_iter());
        let (tx, rx) = mpsc::channel::<(&DescriptionRequest, Result<String>)>();
        std::thread::scope(|scope| {
            for _ in 0..in_flight.max(1) {
                let tx = tx.clone();
                let queue = &queue;
                scope.spawn(move || loop {
                    let next = queue.lock().unwrap_or_else(|p| p.into_inner()).next();
                    let Some(req) = next else { break };
                    let out = provider.complete(req);
                    if tx.send((req, out)).is_err() {
                        break;
                    }
                });
            }
            drop(tx);
            for (req, out) in rx {
                let res = out.and_then(|text| commit(req, text, provider.tag())).and_then(|r| cache.insert(r));
                if let Err(e) = res {
                    log::warn!("description for `{}` failed: {e}", req.key);
                    failures.push((req.prompt_id, req.key.clone(), e.to_string()));
                }
            }
        });
    }
    requests
        .iter()
        .map(|r| match cache.get(r.prompt_id, &r.key) {
            Some(rec) => Ok(rec.clone()),
            None => {
                let reason = failures
                    .iter()
                    .find(|(p, k, _)| *p == r.prompt_id && *k == r.key)
                    .map(|(_, _, e)| e.clone())
                    .unwrap_or_else(|| "no description".into());
                Err(TrexError::ProviderError(format!("{}: {reason}", r.key)))
            }
        })
        .collect()
}

/// Offline source: only what is already in the file; misses are errors.
pub fn lookup_description(cache: &DescriptionCache, prompt: PromptId, key: &DescriptionKey) -> Result<DescriptionRecord> {
    cache
        .get(prompt, key)
        .cloned()
        .ok_or_else(|| TrexError::MissingDescription(key.display()))
}
