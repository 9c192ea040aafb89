//! Text-completion providers and the per-run call context.

use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::tagged::ParseError;
use crate::protocol::sha256_hex;

token_enum! {
    /// Pipeline stage; part of every provider request and playbook key.
    Stage {
        Profile => "profile",
        Classify => "classify",
        Mechanism => "mechanism",
        Pivots => "pivots",
        Tradeoff => "tradeoff",
        Prioritize => "prioritize",
        Augment => "augment",
        Validate => "validate",
        Summarize => "summarize",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProviderRequest {
    pub stage: Stage,
    pub iteration: usize,
    /// What the call is about: a slot key, an augmentation id, or empty.
    pub subject: String,
    pub prompt: String,
    pub max_tokens: u32,
}

impl ProviderRequest {
    pub fn digest(&self) -> String {
        prompt_digest(&self.prompt)
    }
}

pub fn prompt_digest(prompt: &str) -> String {
    sha256_hex(prompt)[..16].to_owned()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub tokens_in: u64,
    pub tokens_out: u64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProviderError {
    #[error("provider transport error: {0}")]
    Transport(String),
    #[error("provider returned an unusable response: {0}")]
    BadResponse(String),
    #[error("no scripted completion for {0}")]
    MissingScript(String),
    #[error("token budget exhausted")]
    BudgetExhausted,
}

/// A prompt-in, text-out completion backend.
pub trait Provider: Send + Sync {
    fn complete(&self, req: &ProviderRequest) -> Result<Completion, ProviderError>;

    fn descriptor(&self) -> String;
}

impl<T: Provider + ?Sized> Provider for std::sync::Arc<T> {
    fn complete(&self, req: &ProviderRequest) -> Result<Completion, ProviderError> {
        (**self).complete(req)
    }

    fn descriptor(&self) -> String {
        (**self).descriptor()
    }
}

impl<T: Provider + ?Sized> Provider for Box<T> {
    fn complete(&self, req: &ProviderRequest) -> Result<Completion, ProviderError> {
        (**self).complete(req)
    }

    fn descriptor(&self) -> String {
        (**self).descriptor()
    }
}

/// Token and call counts accumulated over a run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub calls: u64,
    pub tokens_in: u64,
    pub tokens_out: u64,
}

impl Usage {
    pub fn add(&mut self, other: Usage) {
        self.calls += other.calls;
        self.tokens_in += other.tokens_in;
        self.tokens_out += other.tokens_out;
    }
}

/// One prompt/completion exchange, kept when prompt logging is enabled.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PromptLogEntry {
    pub iteration: usize,
    pub stage: Stage,
    pub subject: String,
    pub attempt: u32,
    pub digest: String,
    pub prompt: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub completion: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StageError {
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Parse(#[from] ParseError),
}

/// Calls a provider on behalf of one run: bounded retries, usage
/// accounting, optional token budget and optional prompt log.
pub struct AgentContext<'a> {
    pub provider: &'a dyn Provider,
    pub retries: u32,
    pub max_tokens: u32,
    pub token_budget: Option<u64>,
    log_prompts: bool,
    usage: Mutex<Usage>,
    log: Mutex<Vec<PromptLogEntry>>,
}

impl<'a> AgentContext<'a> {
    pub fn new(provider: &'a dyn Provider, retries: u32) -> Self {
        Self {
            provider,
            retries,
            max_tokens: 2048,
            token_budget: None,
            log_prompts: false,
            usage: Mutex::new(Usage::default()),
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn with_prompt_log(mut self, enabled: bool) -> Self {
        self.log_prompts = enabled;
        self
    }

    pub fn with_token_budget(mut self, budget: Option<u64>) -> Self {
        self.token_budget = budget;
        self
    }

    pub fn usage(&self) -> Usage {
        *self.usage.lock().expect("usage lock")
    }

    pub fn take_log(&self) -> Vec<PromptLogEntry> {
        std::mem::take(&mut *self.log.lock().expect("log lock"))
    }

    fn record(&self, entry: PromptLogEntry) {
        if self.log_prompts {
            self.log.lock().expect("log lock").push(entry);
        }
    }

    /// Sends `prompt` and parses the reply, retrying up to `retries` times on
    /// provider or parse failure. Each retry carries a note about the failure,
    /// so its prompt differs from the original.
    pub fn call<T>(
        &self,
        stage: Stage,
        iteration: usize,
        subject: &str,
        prompt: &str,
        parse: impl Fn(&str) -> Result<T, ParseError>,
    ) -> Result<T, StageError> {
        let mut last: Option<StageError> = None;
        for attempt in 0..=self.retries {
            if let Some(budget) = self.token_budget {
                let u = self.usage();
                if u.tokens_in + u.tokens_out >= budget {
                    return Err(ProviderError::BudgetExhausted.into());
                }
            }
            let text = match &last {
                None => prompt.to_owned(),
                Some(e) => format!("{prompt}\n\n[retry {attempt}: the previous reply could not be used ({e}); answer again using only the requested tags]"),
            };
            let req = ProviderRequest {
                stage,
                iteration,
                subject: subject.to_owned(),
                prompt: text,
                max_tokens: self.max_tokens,
            };
            let mut entry = PromptLogEntry {
                iteration,
                stage,
                subject: subject.to_owned(),
                attempt,
                digest: req.digest(),
                prompt: req.prompt.clone(),
                completion: None,
                error: None,
            };
            match self.provider.complete(&req) {
                Ok(c) => {
                    self.usage.lock().expect("usage lock").add(Usage {
                        calls: 1,
                        tokens_in: c.tokens_in,
                        tokens_out: c.tokens_out,
                    });
                    let parsed = parse(&c.text);
                    entry.completion = Some(c.text);
                    match parsed {
                        Ok(v) => {
                            self.record(entry);
                            return Ok(v);
                        }
                        Err(e) => {
                            log::debug!("{stage} {subject:?} attempt {attempt}: {e}");
                            entry.error = Some(e.to_string());
                            last = Some(e.into());
                        }
                    }
                }
                Err(e) => {
                    log::debug!("{stage} {subject:?} attempt {attempt}: {e}");
                    entry.error = Some(e.to_string());
                    let fatal = e == ProviderError::BudgetExhausted;
                    last = Some(e.into());
                    if fatal {
                        self.record(entry);
                        break;
                    }
                }
            }
            self.record(entry);
        }
        Err(last.expect("at least one attempt"))
    }
}

/// Wraps a provider and records every exchange as a playbook entry.
pub struct RecordingProvider<P> {
    inner: P,
    entries: Mutex<Vec<super::scripted::PlaybookEntry>>,
}

impl<P: Provider> RecordingProvider<P> {
    pub fn new(inner: P) -> Self {
        Self {
            inner,
            entries: Mutex::new(Vec::new()),
        }
    }

    pub fn into_playbook(self) -> super::scripted::ScriptedPlaybook {
        let mut entries = self.entries.into_inner().expect("entries lock");
        entries.sort_by(|a, b| {
            (a.stage, a.iteration, &a.subject, &a.digest).cmp(&(b.stage, b.iteration, &b.subject, &b.digest))
        });
        super::scripted::ScriptedPlaybook::from_entries(entries)
    }
}

impl<P: Provider> Provider for RecordingProvider<P> {
    fn complete(&self, req: &ProviderRequest) -> Result<Completion, ProviderError> {
        let c = self.inner.complete(req)?;
        self.entries.lock().expect("entries lock").push(super::scripted::PlaybookEntry {
            stage: req.stage,
            iteration: Some(req.iteration),
            subject: Some(req.subject.clone()),
            digest: Some(req.digest()),
            completion: c.text.clone(),
        });
        Ok(c)
    }

    fn descriptor(&self) -> String {
        format!("recording({})", self.inner.descriptor())
    }
}
