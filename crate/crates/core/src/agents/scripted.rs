//! Deterministic replay provider driven by a playbook file.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::provider::{Completion, Provider, ProviderError, ProviderRequest, Stage};

/// One canned completion. `None` fields match anything.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaybookEntry {
    pub stage: Stage,
    #[serde(default)]
    pub iteration: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub digest: Option<String>,
    pub completion: String,
}

type Key = (Stage, Option<usize>, Option<String>, Option<String>);

/// Completions keyed by stage, iteration, subject and prompt digest.
///
/// Lookup tries, in order: exact digest, subject for this iteration, the
/// iteration alone, subject for any iteration, and the stage alone. A miss is
/// an error.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScriptedPlaybook {
    entries: BTreeMap<Key, String>,
}

#[derive(Serialize, Deserialize)]
struct PlaybookFile {
    version: u32,
    entries: Vec<PlaybookEntry>,
}

impl ScriptedPlaybook {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_entries(entries: impl IntoIterator<Item = PlaybookEntry>) -> Self {
        let mut p = Self::new();
        for e in entries {
            p.insert(e);
        }
        p
    }

    pub fn insert(&mut self, e: PlaybookEntry) {
        self.entries.insert((e.stage, e.iteration, e.subject, e.digest), e.completion);
    }

    pub fn add(&mut self, stage: Stage, iteration: Option<usize>, subject: Option<&str>, completion: impl Into<String>) {
        self.insert(PlaybookEntry {
            stage,
            iteration,
            subject: subject.map(str::to_owned),
            digest: None,
            completion: completion.into(),
        });
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> Vec<PlaybookEntry> {
        self.entries
            .iter()
            .map(|((stage, iteration, subject, digest), completion)| PlaybookEntry {
                stage: *stage,
                iteration: *iteration,
                subject: subject.clone(),
                digest: digest.clone(),
                completion: completion.clone(),
            })
            .collect()
    }

    pub fn lookup(&self, req: &ProviderRequest) -> Option<&str> {
        let subject = Some(req.subject.clone());
        let it = Some(req.iteration);
        let digest = Some(req.digest());
        let keys: [Key; 5] = [
            (req.stage, it, subject.clone(), digest),
            (req.stage, it, subject.clone(), None),
            (req.stage, it, None, None),
            (req.stage, None, subject, None),
            (req.stage, None, None, None),
        ];
        keys.iter().find_map(|k| self.entries.get(k).map(String::as_str))
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        let file: PlaybookFile = serde_json::from_str(text)?;
        Ok(Self::from_entries(file.entries))
    }

    pub fn to_json(&self) -> String {
        let file = PlaybookFile {
            version: 1,
            entries: self.entries(),
        };
        let mut s = serde_json::to_string_pretty(&file).expect("playbook serializes");
        s.push('\n');
        s
    }
}

/// Rough token estimate used for scripted accounting: four characters per token.
pub fn estimate_tokens(text: &str) -> u64 {
    (text.chars().count() as u64).div_ceil(4)
}

pub struct ScriptedProvider {
    playbook: ScriptedPlaybook,
}

impl ScriptedProvider {
    pub fn new(playbook: ScriptedPlaybook) -> Self {
        Self { playbook }
    }
}

impl Provider for ScriptedProvider {
    fn complete(&self, req: &ProviderRequest) -> Result<Completion, ProviderError> {
        let text = self.playbook.lookup(req).ok_or_else(|| {
            ProviderError::MissingScript(format!(
                "stage {} iteration {} subject {:?} digest {}",
                req.stage,
                req.iteration,
                req.subject,
                req.digest()
            ))
        })?;
        Ok(Completion {
            text: text.to_owned(),
            tokens_in: estimate_tokens(&req.prompt),
            tokens_out: estimate_tokens(text),
        })
    }

    fn descriptor(&self) -> String {
        "scripted".into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(stage: Stage, iteration: usize, subject: &str, prompt: &str) -> ProviderRequest {
        ProviderRequest {
            stage,
            iteration,
            subject: subject.into(),
            prompt: prompt.into(),
            max_tokens: 100,
        }
    }

    #[test]
    fn lookup_precedence() {
        let mut p = ScriptedPlaybook::new();
        p.add(Stage::Augment, None, None, "any");
        p.add(Stage::Augment, None, Some("s"), "subject-any-iter");
        p.add(Stage::Augment, Some(2), None, "iter");
        p.add(Stage::Augment, Some(2), Some("s"), "subject-iter");
        let r = req(Stage::Augment, 2, "s", "hello");
        p.insert(PlaybookEntry {
            stage: Stage::Augment,
            iteration: Some(2),
            subject: Some("s".into()),
            digest: Some(r.digest()),
            completion: "exact".into(),
        });
        assert_eq!(p.lookup(&r), Some("exact"));
        assert_eq!(p.lookup(&req(Stage::Augment, 2, "s", "other")), Some("subject-iter"));
        assert_eq!(p.lookup(&req(Stage::Augment, 2, "t", "other")), Some("iter"));
        assert_eq!(p.lookup(&req(Stage::Augment, 3, "s", "other")), Some("subject-any-iter"));
        assert_eq!(p.lookup(&req(Stage::Augment, 3, "t", "other")), Some("any"));
        assert_eq!(p.lookup(&req(Stage::Classify, 1, "", "x")), None);
    }

    #[test]
    fn miss_is_an_error_and_tokens_counted() {
        let mut p = ScriptedPlaybook::new();
        p.add(Stage::Classify, Some(1), None, "12345678");
        let prov = ScriptedProvider::new(p.clone());
        let c = prov.complete(&req(Stage::Classify, 1, "", "abcde")).unwrap();
        assert_eq!((c.tokens_in, c.tokens_out), (2, 2));
        assert!(matches!(
            prov.complete(&req(Stage::Classify, 2, "", "abcde")),
            Err(ProviderError::MissingScript(_))
        ));
        assert_eq!(ScriptedPlaybook::from_json(&p.to_json()).unwrap(), p);
    }
}
