//! HTTP client for a remote log-likelihood scorer.
//!
//! `POST {endpoint}/score` with
//! `{"model_id", "mode", "ignore_prompt", "pairs": [{"id", "prompt", "response"}]}`
//! answered by `{"model_id", "logliks": [{"id", "value"}]}`.

use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use llmap_core::{Mode, ModelVector, PairSet, TextPair};
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, thiserror::Error)]
pub enum ScorerError {
    #[error("scorer request failed after {attempts} attempts: {last}")]
    Exhausted { attempts: usize, last: String },
    #[error("scorer rejected the request with status {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("malformed scorer response: {0}")]
    Malformed(String),
    #[error("non-finite score for pair {id:?}: {value}")]
    NonFinite { id: String, value: String },
    #[error("invalid scorer configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone)]
pub struct ScorerConfig {
    pub batch_size: usize,
    /// Retries after the first attempt of each batch.
    pub retries: usize,
    pub concurrency: usize,
    /// Delay before the first retry; doubles on each further retry.
    pub backoff_base: Duration,
    pub timeout: Duration,
}

impl Default for ScorerConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            retries: 3,
            concurrency: 4,
            backoff_base: Duration::from_secs(1),
            timeout: Duration::from_secs(300),
        }
    }
}

#[derive(Serialize)]
struct Request<'a> {
    model_id: &'a str,
    mode: &'static str,
    ignore_prompt: bool,
    pairs: &'a [TextPair],
}

#[derive(Deserialize)]
struct Response {
    model_id: String,
    logliks: Vec<Entry>,
}

#[derive(Deserialize)]
struct Entry {
    id: String,
    value: Value,
}

enum Attempt {
    Transient(String),
    Fatal(ScorerError),
}

fn post(agent: &ureq::Agent, url: &str, body: &[u8]) -> Result<String, Attempt> {
    let mut resp = agent
        .post(url)
        .header("content-type", "application/json")
        .send(body)
        .map_err(|e| Attempt::Transient(e.to_string()))?;
    let status = resp.status().as_u16();
    let text = resp.body_mut().read_to_string().map_err(|e| Attempt::Transient(e.to_string()))?;
    match status {
        200..=299 => Ok(text),
        429 | 500..=599 => Err(Attempt::Transient(format!("status {status}"))),
        _ => Err(Attempt::Fatal(ScorerError::Rejected { status, body: text })),
    }
}

fn decode(text: &str, model_id: &str, batch: &[TextPair]) -> Result<Vec<f64>, ScorerError> {
    let r: Response = serde_json::from_str(text).map_err(|e| ScorerError::Malformed(e.to_string()))?;
    if r.model_id != model_id {
        return Err(ScorerError::Malformed(format!("model_id {:?}, expected {model_id:?}", r.model_id)));
    }
    let mut by_id: HashMap<&str, &Value> = HashMap::with_capacity(r.logliks.len());
    for e in &r.logliks {
        if by_id.insert(&e.id, &e.value).is_some() {
            return Err(ScorerError::Malformed(format!("duplicate id {:?}", e.id)));
        }
    }
    if by_id.len() != batch.len() {
        return Err(ScorerError::Malformed(format!("{} scores for {} pairs", by_id.len(), batch.len())));
    }
    batch
        .iter()
        .map(|p| {
            let v = by_id.get(p.id.as_str()).ok_or_else(|| ScorerError::Malformed(format!("no score for {:?}", p.id)))?;
            match v.as_f64() {
                Some(x) if x.is_finite() => Ok(x),
                _ => Err(ScorerError::NonFinite { id: p.id.clone(), value: v.to_string() }),
            }
        })
        .collect()
}

fn score_batch(
    agent: &ureq::Agent,
    url: &str,
    model_id: &str,
    mode: Mode,
    batch: &[TextPair],
    cfg: &ScorerConfig,
) -> Result<Vec<f64>, ScorerError> {
    let body = serde_json::to_vec(&Request {
        model_id,
        mode: mode.as_str(),
        ignore_prompt: mode == Mode::Unconditional,
        pairs: batch,
    })
    .map_err(|e| ScorerError::Config(e.to_string()))?;
    let mut delay = cfg.backoff_base;
    let mut last = String::new();
    for attempt in 0..=cfg.retries {
        if attempt > 0 {
            thread::sleep(delay);
            delay *= 2;
        }
        match post(agent, url, &body) {
            Ok(text) => return decode(&text, model_id, batch),
            Err(Attempt::Fatal(e)) => return Err(e),
            Err(Attempt::Transient(msg)) => last = msg,
        }
    }
    Err(ScorerError::Exhausted { attempts: cfg.retries + 1, last })
}

/// Scores every pair with `model_id`, batching and retrying as configured.
/// Either all scores come back, in pair order, or an error does.
pub fn fetch_scores(
    endpoint: &str,
    model_id: &str,
    pairs: &PairSet,
    mode: Mode,
    cfg: &ScorerConfig,
) -> Result<ModelVector, ScorerError> {
    if mode == Mode::Pmi {
        return Err(ScorerError::Config("mode must be conditional or unconditional".into()));
    }
    if cfg.batch_size == 0 || cfg.concurrency == 0 {
        return Err(ScorerError::Config("batch size and concurrency must be at least 1".into()));
    }
    let url = format!("{}/score", endpoint.trim_end_matches('/'));
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .http_status_as_error(false)
        .timeout_global(Some(cfg.timeout))
        .build()
        .into();
    let batches: Vec<&[TextPair]> = pairs.pairs().chunks(cfg.batch_size).collect();
    let results: Mutex<Vec<Option<Result<Vec<f64>, ScorerError>>>> =
        Mutex::new((0..batches.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let failed = AtomicBool::new(false);
    thread::scope(|s| {
        for _ in 0..cfg.concurrency.min(batches.len()) {
            s.spawn(|| loop {
                // claimed batches always run, so they form a prefix
                if failed.load(Ordering::SeqCst) {
                    break;
                }
                let b = next.fetch_add(1, Ordering::SeqCst);
                if b >= batches.len() {
                    break;
                }
                let r = score_batch(&agent, &url, model_id, mode, batches[b], cfg);
                if r.is_err() {
                    failed.store(true, Ordering::SeqCst);
                }
                results.lock().expect("no worker panics while holding the lock")[b] = Some(r);
            });
        }
    });
    let mut values = Vec::with_capacity(pairs.len());
    let results = results.into_inner().expect("workers have finished");
    // the earliest failing batch decides the error
    for r in results {
        match r {
            Some(Ok(v)) => values.extend(v),
            Some(Err(e)) => return Err(e),
            None => unreachable!("unclaimed batches only follow a failed one"),
        }
    }
    Ok(ModelVector::raw(model_id, values))
}
