use std::future::Future;
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use tokio::io::AsyncWriteExt;
use tokio::sync::{Mutex, Semaphore};
use tracing::{debug, warn};

use super::{
    aggregate, build_prompt_with, parse_verdict, select_reference, JudgeError, JudgeItem, JudgeSummary,
    JudgeVerdict, PromptTemplates, ReferencePolicy, TokenBucket, Variant, Verdict,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JudgeConfig {
    /// Chat-completion URL of any OpenAI-compatible JSON API.
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    /// Environment variable holding the bearer token, if any.
    pub api_key_env: Option<String>,
    pub max_in_flight: usize,
    /// Requests per second; unlimited when absent.
    pub requests_per_second: Option<f64>,
    /// Attempts per (item, variant), first try included.
    pub max_retries: u32,
    pub timeout_secs: u64,
    pub reference_policy: ReferencePolicy,
    pub templates: PromptTemplates,
}

impl Default for JudgeConfig {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            model: "gpt-3.5-turbo".into(),
            temperature: 0.0,
            api_key_env: Some("SKYEYE_JUDGE_API_KEY".into()),
            max_in_flight: 4,
            requests_per_second: None,
            max_retries: 3,
            timeout_secs: 60,
            reference_policy: ReferencePolicy::default(),
            templates: PromptTemplates::default(),
        }
    }
}

#[derive(Debug, Clone, thiserror::Error)]
#[error("{0}")]
pub struct TransportError(pub String);

pub trait ChatBackend: Send + Sync + 'static {
    fn complete(&self, prompt: &str) -> impl Future<Output = Result<String, TransportError>> + Send;
}

impl<B: ChatBackend> ChatBackend for Arc<B> {
    fn complete(&self, prompt: &str) -> impl Future<Output = Result<String, TransportError>> + Send {
        (**self).complete(prompt)
    }
}

pub struct HttpBackend {
    client: reqwest::Client,
    endpoint: String,
    model: String,
    temperature: f64,
    api_key: Option<String>,
}

impl HttpBackend {
    pub fn new(config: &JudgeConfig) -> Result<Self, JudgeError> {
        let client = reqwest::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| JudgeError::Client(e.to_string()))?;
        Ok(Self {
            client,
            endpoint: config.endpoint.clone(),
            model: config.model.clone(),
            temperature: config.temperature,
            api_key: config.api_key_env.as_deref().and_then(|k| std::env::var(k).ok()),
        })
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    content: String,
}

impl ChatBackend for HttpBackend {
    async fn complete(&self, prompt: &str) -> Result<String, TransportError> {
        let body = serde_json::json!({
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.temperature,
        });
        let mut req = self.client.post(&self.endpoint).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().await.map_err(|e| TransportError(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(TransportError(format!("HTTP {status}")));
        }
        let parsed: ChatResponse = resp.json().await.map_err(|e| TransportError(format!("bad response body: {e}")))?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| TransportError("response has no choices".into()))
    }
}

struct Shared<B> {
    backend: B,
    config: JudgeConfig,
    permits: Semaphore,
    bucket: Option<TokenBucket>,
    log: Option<Mutex<tokio::fs::File>>,
    transport_failed: AtomicUsize,
    aborted: AtomicBool,
    total: usize,
}

/// Judges every item under both prompts, appending each verdict to the log
/// at `log_path` as it completes.
///
/// Each (item, variant) gets at most `max_retries` attempts; a transport
/// error or an unparseable reply triggers a retry. Once more than half of
/// all pairs have failed in transport the run stops.
pub async fn judge_corpus<B: ChatBackend>(
    items: &[JudgeItem],
    config: &JudgeConfig,
    backend: B,
    log_path: Option<&Path>,
) -> Result<(Vec<JudgeVerdict>, JudgeSummary), JudgeError> {
    config.templates.validate()?;
    let mut jobs = Vec::new();
    for item in items {
        let gt = select_reference(item, config.reference_policy)?;
        for variant in Variant::BOTH {
            let prompt = build_prompt_with(&config.templates, variant, gt, &item.generated)?;
            jobs.push((item.item_id.clone(), prompt));
        }
    }
    let log = match log_path {
        Some(p) => Some(Mutex::new(
            tokio::fs::OpenOptions::new().create(true).append(true).open(p).await?,
        )),
        None => None,
    };
    let shared = Arc::new(Shared {
        backend,
        config: config.clone(),
        permits: Semaphore::new(config.max_in_flight.max(1)),
        bucket: config.requests_per_second.map(|r| TokenBucket::new(r, 1)),
        log,
        transport_failed: AtomicUsize::new(0),
        aborted: AtomicBool::new(false),
        total: jobs.len(),
    });

    let mut handles = Vec::with_capacity(jobs.len());
    for (item_id, prompt) in jobs {
        let shared = Arc::clone(&shared);
        handles.push(tokio::spawn(async move { run_one(&shared, item_id, prompt).await }));
    }
    let mut verdicts = Vec::new();
    for h in handles {
        if let Some(v) = h.await.map_err(|e| JudgeError::Client(e.to_string()))?? {
            verdicts.push(v);
        }
    }
    if shared.aborted.load(Ordering::SeqCst) {
        return Err(JudgeError::TooManyTransportFailures {
            failed: shared.transport_failed.load(Ordering::SeqCst),
            total: shared.total,
        });
    }
    verdicts.sort_by(|a, b| (&a.item_id, a.variant).cmp(&(&b.item_id, b.variant)));
    let summary = aggregate(&verdicts)?;
    Ok((verdicts, summary))
}

async fn run_one<B: ChatBackend>(
    shared: &Shared<B>,
    item_id: String,
    prompt: super::JudgePrompt,
) -> Result<Option<JudgeVerdict>, JudgeError> {
    let _permit = shared.permits.acquire().await.expect("semaphore never closed");
    let max = shared.config.max_retries.max(1);
    let mut attempts = 0;
    let mut raw = String::new();
    let mut verdict = Verdict::Unparseable;
    let mut transport_failure = false;
    while attempts < max {
        if shared.aborted.load(Ordering::SeqCst) {
            return Ok(None);
        }
        if let Some(b) = &shared.bucket {
            b.acquire().await;
        }
        attempts += 1;
        match shared.backend.complete(&prompt.rendered).await {
            Ok(text) => {
                transport_failure = false;
                verdict = parse_verdict(&text);
                raw = text;
                if verdict != Verdict::Unparseable {
                    break;
                }
                debug!(item = %item_id, attempt = attempts, "unparseable judge reply");
            }
            Err(e) => {
                transport_failure = true;
                raw = format!("transport error: {e}");
                warn!(item = %item_id, attempt = attempts, error = %e, "judge request failed");
                if attempts < max {
                    tokio::time::sleep(Duration::from_millis(100 * 2u64.pow(attempts - 1))).await;
                }
            }
        }
    }
    if transport_failure {
        let failed = shared.transport_failed.fetch_add(1, Ordering::SeqCst) + 1;
        if failed * 2 > shared.total {
            shared.aborted.store(true, Ordering::SeqCst);
        }
    }
    let v = JudgeVerdict {
        item_id,
        variant: prompt.variant,
        verdict,
        raw_response: raw,
        attempts,
        transport_failure,
        ground_truth: prompt.ground_truth,
        generated: prompt.generated,
        model: shared.config.model.clone(),
        temperature: shared.config.temperature,
    };
    if let Some(log) = &shared.log {
        let mut line = serde_json::to_string(&v).expect("verdicts serialize");
        line.push('\n');
        let mut f = log.lock().await;
        f.write_all(line.as_bytes()).await?;
        f.flush().await?;
    }
    Ok(Some(v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::AtomicU32;

    struct Scripted<F: Fn(&str, u32) -> Result<String, TransportError> + Send + Sync + 'static> {
        f: F,
        calls: AtomicU32,
    }

    impl<F: Fn(&str, u32) -> Result<String, TransportError> + Send + Sync + 'static> ChatBackend for Scripted<F> {
        async fn complete(&self, prompt: &str) -> Result<String, TransportError> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            (self.f)(prompt, n)
        }
    }

    fn items(n: usize) -> Vec<JudgeItem> {
        (0..n)
            .map(|i| JudgeItem {
                item_id: format!("{i:02}"),
                ground_truths: vec![format!("ground truth {i}")],
                generated: format!("generated {i}"),
            })
            .collect()
    }

    #[tokio::test]
    async fn always_yes() {
        let b = Scripted { f: |_: &str, _| Ok("Yes".to_string()), calls: AtomicU32::new(0) };
        let (v, s) = judge_corpus(&items(5), &JudgeConfig::default(), b, None).await.unwrap();
        assert_eq!(v.len(), 10);
        assert_eq!((s.accuracy_1, s.accuracy_2), (1.0, 1.0));
    }

    #[tokio::test(start_paused = true)]
    async fn unparseable_after_retries_and_request_bound() {
        let b = Arc::new(Scripted { f: |_: &str, _| Ok("maybe".to_string()), calls: AtomicU32::new(0) });
        let cfg = JudgeConfig { max_retries: 3, ..JudgeConfig::default() };
        let (v, s) = judge_corpus(&items(4), &cfg, Arc::clone(&b), None).await.unwrap();
        assert!(v.iter().all(|x| x.verdict == Verdict::Unparseable && x.attempts == 3));
        assert_eq!((s.accuracy_1, s.unparseable_rate_1), (0.0, 1.0));
        assert_eq!(b.calls.load(Ordering::SeqCst), 4 * 2 * 3);
    }

    #[tokio::test(start_paused = true)]
    async fn transport_failures_abort_the_run() {
        let b = Scripted { f: |_: &str, _| Err(TransportError("refused".into())), calls: AtomicU32::new(0) };
        let err = judge_corpus(&items(4), &JudgeConfig::default(), b, None).await.unwrap_err();
        assert!(matches!(err, JudgeError::TooManyTransportFailures { .. }));
    }

    #[tokio::test(start_paused = true)]
    async fn minority_transport_failures_become_unparseable() {
        let b = Scripted {
            f: |p: &str, _| if p.contains("generated 0") { Err(TransportError("reset".into())) } else { Ok("no".into()) },
            calls: AtomicU32::new(0),
        };
        let (v, s) = judge_corpus(&items(4), &JudgeConfig::default(), b, None).await.unwrap();
        assert_eq!(s.transport_failures, 2);
        assert_eq!(v.iter().filter(|x| x.verdict == Verdict::Unparseable).count(), 2);
    }
}
