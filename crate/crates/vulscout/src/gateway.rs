//! Single gateway for all model calls.
//!
//! Three backends sit behind one `complete` entry point: a live HTTP endpoint
//! (responses recorded into the cache), replay from a previously recorded
//! cache, and a scripted mock that serves pre-authored responses in order.
//! Request settings are pinned — temperature 0, top_p 1, JSON-only output —
//! so recorded runs replay bit-for-bit. The gateway also keeps exact call and
//! output-token tallies for run accounting.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canon;
use crate::model::AgentId;
use crate::rational::Rational;

pub const TEMPERATURE: f64 = 0.0;
pub const TOP_P: f64 = 1.0;
pub const DEFAULT_MAX_TOKENS: u32 = 4096;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("endpoint failure after {attempts} attempt(s): {detail}")]
    Endpoint { attempts: u32, detail: String },
    #[error("replay miss for agent {agent} (key {key})")]
    ReplayMiss { agent: String, key: String },
    #[error("mock script exhausted for agent {0}")]
    ScriptExhausted(String),
    #[error("cache io failure at {path}: {source}")]
    CacheIo {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed script or cache entry: {0}")]
    MalformedEntry(String),
    #[error("backend not configured: {0}")]
    NotConfigured(String),
}

/// A completion request with pinned decoding settings.
///
/// `temperature` and `top_p` are fixed at construction and there is no way to
/// override them.
#[derive(Debug, Clone, Serialize)]
pub struct GatewayRequest {
    pub prompt: String,
    pub agent_id: AgentId,
    temperature: f64,
    top_p: f64,
    pub json_only: bool,
    pub max_tokens: u32,
}

impl GatewayRequest {
    pub fn new(agent_id: impl Into<AgentId>, prompt: impl Into<String>) -> GatewayRequest {
        GatewayRequest {
            prompt: prompt.into(),
            agent_id: agent_id.into(),
            temperature: TEMPERATURE,
            top_p: TOP_P,
            json_only: true,
            max_tokens: DEFAULT_MAX_TOKENS,
        }
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn top_p(&self) -> f64 {
        self.top_p
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Live,
    Replay,
    Mock,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GatewayResponse {
    pub text: String,
    pub output_tokens: u64,
    pub backend: BackendKind,
    pub cache_hit: bool,
}

/// One pre-authored mock response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptEntry {
    pub agent_id: String,
    pub text: String,
    pub output_tokens: u64,
}

/// An ordered list of scripted responses, consumed per agent in FIFO order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MockScript {
    pub entries: Vec<ScriptEntry>,
}

impl MockScript {
    pub fn load(path: &Path) -> Result<MockScript, GatewayError> {
        let text = std::fs::read_to_string(path).map_err(|source| GatewayError::CacheIo {
            path: path.display().to_string(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| GatewayError::MalformedEntry(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<(), GatewayError> {
        canon::write_canonical(path, self).map_err(|source| GatewayError::CacheIo {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn push(&mut self, agent_id: &str, text: impl Into<String>, output_tokens: u64) {
        self.entries.push(ScriptEntry {
            agent_id: agent_id.to_string(),
            text: text.into(),
            output_tokens,
        });
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Cache entry persisted one-file-per-key under the cache directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CacheEntry {
    agent_id: String,
    model_id: String,
    prompt: String,
    text: String,
    output_tokens: u64,
}

#[derive(Debug, Clone, Serialize)]
struct CacheKeyMaterial<'a> {
    agent_id: &'a str,
    model_id: &'a str,
    prompt: &'a str,
}

/// Stable content hash of `(prompt, agent_id, model_id)`.
pub fn cache_key(prompt: &str, agent_id: &str, model_id: &str) -> String {
    canon::content_hash(&CacheKeyMaterial {
        agent_id,
        model_id,
        prompt,
    })
    .expect("hashable key material")
}

#[derive(Debug, Clone)]
pub struct LiveConfig {
    pub endpoint: String,
    pub token: String,
    pub model_id: String,
}

/// Environment variable names for the live backend.
pub mod env_vars {
    pub const ENDPOINT: &str = "VULSCOUT_ENDPOINT";
    pub const TOKEN: &str = "VULSCOUT_TOKEN";
    pub const MODEL: &str = "VULSCOUT_MODEL";
}

impl LiveConfig {
    /// Read endpoint, credential token, and model id from the environment.
    pub fn from_env() -> Result<LiveConfig, GatewayError> {
        let need = |name: &str| {
            std::env::var(name)
                .map_err(|_| GatewayError::NotConfigured(format!("missing env var {name}")))
        };
        Ok(LiveConfig {
            endpoint: need(env_vars::ENDPOINT)?,
            token: need(env_vars::TOKEN)?,
            model_id: need(env_vars::MODEL)?,
        })
    }
}

enum Backend {
    Live(LiveConfig),
    Replay { model_id: String },
    Mock { queues: Mutex<HashMap<String, VecDeque<ScriptEntry>>> },
}

/// The completion surface pipeline stages call through. Implemented by the
/// gateway itself and by the per-sample tally wrapper.
pub trait CompleteApi: Sync {
    fn complete(&self, req: &GatewayRequest) -> Result<GatewayResponse, GatewayError>;
}

impl CompleteApi for Gateway {
    fn complete(&self, req: &GatewayRequest) -> Result<GatewayResponse, GatewayError> {
        Gateway::complete(self, req)
    }
}

/// Wraps a gateway and tallies the calls made through it, so one sample's
/// share of a shared gateway can be accounted exactly.
pub struct SampleTally<'a> {
    inner: &'a Gateway,
    calls: AtomicU64,
    output_tokens: AtomicU64,
}

impl<'a> SampleTally<'a> {
    pub fn new(inner: &'a Gateway) -> SampleTally<'a> {
        SampleTally {
            inner,
            calls: AtomicU64::new(0),
            output_tokens: AtomicU64::new(0),
        }
    }

    pub fn accounting(&self) -> Accounting {
        Accounting {
            calls: self.calls.load(Ordering::Relaxed),
            output_tokens: self.output_tokens.load(Ordering::Relaxed),
        }
    }
}

impl CompleteApi for SampleTally<'_> {
    fn complete(&self, req: &GatewayRequest) -> Result<GatewayResponse, GatewayError> {
        let resp = self.inner.complete(req)?;
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.output_tokens.fetch_add(resp.output_tokens, Ordering::Relaxed);
        Ok(resp)
    }
}

/// Per-run call and token tallies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Accounting {
    pub calls: u64,
    pub output_tokens: u64,
}

impl Accounting {
    /// Exact per-sample averages; absent when the run had no samples.
    pub fn averages(&self, samples: usize) -> Option<(Rational, Rational)> {
        if samples == 0 {
            return None;
        }
        Some((
            Rational::new(self.calls as i128, samples as i128),
            Rational::new(self.output_tokens as i128, samples as i128),
        ))
    }
}

/// The gateway all pipeline stages call through.
///
/// Safe to share across worker threads: counters are atomic, cache writes are
/// write-then-rename, and mock script consumption is serialized per agent.
pub struct Gateway {
    backend: Backend,
    cache_dir: Option<PathBuf>,
    model_id: String,
    calls: AtomicU64,
    output_tokens: AtomicU64,
}

impl Gateway {
    pub fn live(config: LiveConfig, cache_dir: Option<PathBuf>) -> Gateway {
        let model_id = config.model_id.clone();
        Gateway {
            backend: Backend::Live(config),
            cache_dir,
            model_id,
            calls: AtomicU64::new(0),
            output_tokens: AtomicU64::new(0),
        }
    }

    /// Replay from a recorded cache; every miss is an error.
    pub fn replay(cache_dir: PathBuf, model_id: impl Into<String>) -> Gateway {
        let model_id = model_id.into();
        Gateway {
            backend: Backend::Replay { model_id: model_id.clone() },
            cache_dir: Some(cache_dir),
            model_id,
            calls: AtomicU64::new(0),
            output_tokens: AtomicU64::new(0),
        }
    }

    /// Scripted mock. When `cache_dir` is set, served responses are recorded
    /// exactly like live ones, so a mock run can later be replayed.
    pub fn mock(script: MockScript, cache_dir: Option<PathBuf>) -> Gateway {
        let mut queues: HashMap<String, VecDeque<ScriptEntry>> = HashMap::new();
        for entry in script.entries {
            queues.entry(entry.agent_id.clone()).or_default().push_back(entry);
        }
        Gateway {
            backend: Backend::Mock { queues: Mutex::new(queues) },
            cache_dir,
            model_id: "mock".to_string(),
            calls: AtomicU64::new(0),
            output_tokens: AtomicU64::new(0),
        }
    }

    pub fn backend_kind(&self) -> BackendKind {
        match self.backend {
            Backend::Live(_) => BackendKind::Live,
            Backend::Replay { .. } => BackendKind::Replay,
            Backend::Mock { .. } => BackendKind::Mock,
        }
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    /// Issue one completion.
    pub fn complete(&self, req: &GatewayRequest) -> Result<GatewayResponse, GatewayError> {
        let response = match &self.backend {
            Backend::Mock { queues } => {
                let entry = {
                    let mut guard = queues.lock().expect("script lock");
                    guard
                        .get_mut(req.agent_id.as_str())
                        .and_then(|q| q.pop_front())
                };
                let entry = entry
                    .ok_or_else(|| GatewayError::ScriptExhausted(req.agent_id.to_string()))?;
                let resp = GatewayResponse {
                    text: entry.text,
                    output_tokens: entry.output_tokens,
                    backend: BackendKind::Mock,
                    cache_hit: false,
                };
                self.record(req, &resp)?;
                resp
            }
            Backend::Replay { model_id } => {
                let key = cache_key(&req.prompt, req.agent_id.as_str(), model_id);
                let entry = self.read_cache(&key)?.ok_or_else(|| GatewayError::ReplayMiss {
                    agent: req.agent_id.to_string(),
                    key: key.clone(),
                })?;
                GatewayResponse {
                    text: entry.text,
                    output_tokens: entry.output_tokens,
                    backend: BackendKind::Replay,
                    cache_hit: true,
                }
            }
            Backend::Live(config) => {
                let resp = self.call_live(config, req)?;
                self.record(req, &resp)?;
                resp
            }
        };
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.output_tokens.fetch_add(response.output_tokens, Ordering::Relaxed);
        Ok(response)
    }

    /// Totals across every `complete` call so far.
    pub fn accounting(&self) -> Accounting {
        Accounting {
            calls: self.calls.load(Ordering::Relaxed),
            output_tokens: self.output_tokens.load(Ordering::Relaxed),
        }
    }

    /// Remaining scripted responses per agent (mock backend only).
    pub fn remaining_script(&self) -> Option<BTreeMap<String, usize>> {
        match &self.backend {
            Backend::Mock { queues } => {
                let guard = queues.lock().expect("script lock");
                Some(
                    guard
                        .iter()
                        .filter(|(_, q)| !q.is_empty())
                        .map(|(k, q)| (k.clone(), q.len()))
                        .collect(),
                )
            }
            _ => None,
        }
    }

    fn cache_path(&self, key: &str) -> Option<PathBuf> {
        self.cache_dir.as_ref().map(|d| d.join(format!("{key}.json")))
    }

    fn record(&self, req: &GatewayRequest, resp: &GatewayResponse) -> Result<(), GatewayError> {
        let key = cache_key(&req.prompt, req.agent_id.as_str(), &self.model_id);
        let Some(path) = self.cache_path(&key) else {
            return Ok(());
        };
        let entry = CacheEntry {
            agent_id: req.agent_id.to_string(),
            model_id: self.model_id.clone(),
            prompt: req.prompt.clone(),
            text: resp.text.clone(),
            output_tokens: resp.output_tokens,
        };
        canon::write_canonical(&path, &entry).map_err(|source| GatewayError::CacheIo {
            path: path.display().to_string(),
            source,
        })
    }

    fn read_cache(&self, key: &str) -> Result<Option<CacheEntry>, GatewayError> {
        let Some(path) = self.cache_path(key) else {
            return Ok(None);
        };
        match std::fs::read_to_string(&path) {
            Ok(text) => serde_json::from_str(&text)
                .map(Some)
                .map_err(|e| GatewayError::MalformedEntry(format!("{}: {e}", path.display()))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(source) => Err(GatewayError::CacheIo {
                path: path.display().to_string(),
                source,
            }),
        }
    }

    fn call_live(&self, config: &LiveConfig, req: &GatewayRequest) -> Result<GatewayResponse, GatewayError> {
        let body = serde_json::json!({
            "model": config.model_id,
            "messages": [{"role": "user", "content": req.prompt}],
            "temperature": req.temperature(),
            "top_p": req.top_p(),
            "max_tokens": req.max_tokens,
            "response_format": if req.json_only { serde_json::json!({"type": "json_object"}) } else { serde_json::Value::Null },
        });
        let mut last_err = String::new();
        let max_attempts = 3u32;
        for attempt in 0..max_attempts {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(250 * (1 << attempt)));
            }
            let result = ureq::post(&config.endpoint)
                .header("Authorization", &format!("Bearer {}", config.token))
                .send_json(&body);
            match result {
                Ok(mut resp) => {
                    let text = resp
                        .body_mut()
                        .read_to_string()
                        .map_err(|e| GatewayError::Endpoint {
                            attempts: attempt + 1,
                            detail: e.to_string(),
                        })?;
                    return parse_live_response(&text).ok_or_else(|| GatewayError::Endpoint {
                        attempts: attempt + 1,
                        detail: format!("unexpected response shape: {text}"),
                    });
                }
                Err(e) => last_err = e.to_string(),
            }
        }
        Err(GatewayError::Endpoint {
            attempts: max_attempts,
            detail: last_err,
        })
    }
}

fn parse_live_response(text: &str) -> Option<GatewayResponse> {
    let v: serde_json::Value = serde_json::from_str(text).ok()?;
    let content = v
        .get("choices")?
        .get(0)?
        .get("message")?
        .get("content")?
        .as_str()?
        .to_string();
    let output_tokens = v
        .get("usage")
        .and_then(|u| u.get("completion_tokens"))
        .and_then(serde_json::Value::as_u64)
        .unwrap_or(0);
    Some(GatewayResponse {
        text: content,
        output_tokens,
        backend: BackendKind::Live,
        cache_hit: false,
    })
}
