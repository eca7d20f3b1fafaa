use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::clips::ClipRecord;
use crate::error::{Error, Result};

pub const DEFAULT_WORD_CAP: usize = 25;

/// Environment variable holding the bearer token for the external summarizer.
pub const CREDENTIAL_ENV: &str = "HTA_SUMMARIZER_TOKEN";

/// Instruction sent ahead of the joined input.
pub fn prompt(word_cap: usize) -> String {
    format!(
        "Summarize the following sentences into a single sentence, not exceeding {word_cap} words. \
         Do not output any additional text and use any external information."
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SummarizerKind {
    ExternalLlm {
        endpoint: String,
        /// Variable to read the bearer token from; unset means no header.
        credential_env: String,
    },
    ExtractiveFallback,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummarizerSpec {
    pub kind: SummarizerKind,
    pub word_cap: usize,
    /// Upper bound on in-flight external requests.
    pub max_concurrency: usize,
    pub timeout_secs: u64,
}

impl Default for SummarizerSpec {
    fn default() -> Self {
        SummarizerSpec {
            kind: SummarizerKind::ExtractiveFallback,
            word_cap: DEFAULT_WORD_CAP,
            max_concurrency: 4,
            timeout_secs: 30,
        }
    }
}

impl SummarizerSpec {
    pub fn external(endpoint: impl Into<String>) -> Self {
        SummarizerSpec {
            kind: SummarizerKind::ExternalLlm {
                endpoint: endpoint.into(),
                credential_env: CREDENTIAL_ENV.to_string(),
            },
            ..Default::default()
        }
    }

    /// `fallback` or an `http(s)://` endpoint.
    pub fn parse(s: &str) -> Result<Self> {
        if s == "fallback" {
            Ok(SummarizerSpec::default())
        } else if s.starts_with("http://") || s.starts_with("https://") {
            Ok(SummarizerSpec::external(s))
        } else {
            Err(Error::config(format!(
                "summarizer must be `fallback` or an http(s) URL, got {s:?}"
            )))
        }
    }
}

/// The first `cap` whitespace-separated words.
pub fn truncate_words(text: &str, cap: usize) -> String {
    text.split_whitespace()
        .take(cap)
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

#[derive(Serialize)]
struct Request<'a> {
    prompt: &'a str,
    input: &'a str,
}

#[derive(Deserialize)]
struct Reply {
    output: String,
}

fn call_external(
    endpoint: &str,
    credential_env: &str,
    input: &str,
    spec: &SummarizerSpec,
) -> Result<String> {
    let agent = ureq::AgentBuilder::new()
        .timeout(Duration::from_secs(spec.timeout_secs))
        .build();
    let mut request = agent.post(endpoint);
    if let Ok(token) = std::env::var(credential_env) {
        request = request.set("Authorization", &format!("Bearer {token}"));
    }
    let body = Request {
        prompt: &prompt(spec.word_cap),
        input,
    };
    let reply: Reply = request
        .send_json(&body)
        .map_err(|e| Error::Transport(format!("{endpoint}: {e}")))?
        .into_json()
        .map_err(|e| Error::Transport(format!("{endpoint}: unreadable reply: {e}")))?;
    Ok(reply.output.trim().to_string())
}

/// One summary of `texts`. External failures surface as
/// [`Error::Transport`]; see [`summarize_or_fallback`] for the retry policy.
pub fn summarize<S: AsRef<str>>(texts: &[S], spec: &SummarizerSpec) -> Result<String> {
    if texts.is_empty() {
        return Err(Error::contract("nothing to summarize"));
    }
    let joined = texts
        .iter()
        .map(|t| t.as_ref().trim())
        .collect::<Vec<_>>()
        .join(" ");
    match &spec.kind {
        SummarizerKind::ExtractiveFallback => Ok(truncate_words(&joined, spec.word_cap)),
        SummarizerKind::ExternalLlm {
            endpoint,
            credential_env,
        } => call_external(endpoint, credential_env, &joined, spec),
    }
}

/// External summary with one retry, then the extractive fallback. The
/// result never exceeds the word cap.
pub fn summarize_or_fallback<S: AsRef<str>>(texts: &[S], spec: &SummarizerSpec) -> Result<String> {
    let first = summarize(texts, spec);
    let reply = match first {
        Err(Error::Transport(e)) => {
            log::warn!("summarizer failed, retrying: {e}");
            match summarize(texts, spec) {
                Err(Error::Transport(e)) => {
                    log::warn!("summarizer failed twice, using extractive fallback: {e}");
                    let fallback = SummarizerSpec {
                        kind: SummarizerKind::ExtractiveFallback,
                        ..spec.clone()
                    };
                    summarize(texts, &fallback)?
                }
                other => other?,
            }
        }
        other => other?,
    };
    if word_count(&reply) > spec.word_cap {
        log::debug!("summary over {} words truncated", spec.word_cap);
        return Ok(truncate_words(&reply, spec.word_cap));
    }
    Ok(reply)
}

/// Fills the summarized fields of medium and long clips; short clips keep
/// their raw texts. At most `max_concurrency` records are in flight.
pub fn summarize_records(records: &mut [ClipRecord], spec: &SummarizerSpec) -> Result<()> {
    let jobs: Vec<usize> = (0..records.len())
        .filter(|&i| records[i].scale.is_summarized())
        .collect();
    for r in records.iter_mut().filter(|r| !r.scale.is_summarized()) {
        r.summarized_subtitle = r.subtitle.clone();
        r.summarized_caption = r.caption.clone();
    }
    let inputs: Vec<(String, String)> = jobs
        .iter()
        .map(|&i| (records[i].subtitle.clone(), records[i].caption.clone()))
        .collect();
    type Slot = Mutex<Option<Result<(String, String)>>>;
    let results: Vec<Slot> = inputs.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = spec.max_concurrency.max(1).min(inputs.len().max(1));
    let one = |text: &str| -> Result<String> {
        if text.trim().is_empty() {
            Ok(String::new())
        } else {
            summarize_or_fallback(&[text], spec)
        }
    };
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let j = next.fetch_add(1, Ordering::Relaxed);
                let Some((sub, cap)) = inputs.get(j) else {
                    break;
                };
                let out = one(sub).and_then(|s| Ok((s, one(cap)?)));
                *results[j].lock().expect("poisoned") = Some(out);
            });
        }
    });
    for (&i, slot) in jobs.iter().zip(results) {
        let (sub, cap) = slot
            .into_inner()
            .expect("poisoned")
            .expect("every job ran")?;
        records[i].summarized_subtitle = sub;
        records[i].summarized_caption = cap;
    }
    Ok(())
}
