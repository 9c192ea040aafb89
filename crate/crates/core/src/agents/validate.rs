//! Judge stage: grades each augmentation and filters fail-closed.

use super::prompts::{self, render_with, trial_vars};
use super::provider::{AgentContext, Stage};
use super::schema::Verdict;
use crate::modification::{Augmentation, ValidationTier};
use crate::protocol::TrialProtocol;

/// Optional supporting-evidence source for the judge prompt.
pub trait EvidenceLookup: Send + Sync {
    fn lookup(&self, aug: &Augmentation, p: &TrialProtocol) -> Option<String>;
}

#[derive(Debug, Clone, Default)]
pub struct ValidationOutcome {
    /// Excellent, Good or Moderate.
    pub passed: Vec<Augmentation>,
    /// Bad, Banned, or still Pending after a provider failure.
    pub excluded: Vec<Augmentation>,
}

impl ValidationOutcome {
    pub fn banned(&self) -> impl Iterator<Item = &Augmentation> {
        self.excluded.iter().filter(|a| a.validation == ValidationTier::Banned)
    }
}

pub fn run_validate(
    ctx: &AgentContext<'_>,
    augs: Vec<Augmentation>,
    p: &TrialProtocol,
    iteration: usize,
    evidence: Option<&dyn EvidenceLookup>,
) -> ValidationOutcome {
    let base = trial_vars(p);
    let mut out = ValidationOutcome::default();
    for mut aug in augs {
        let ev = evidence
            .and_then(|e| e.lookup(&aug, p))
            .map(|text| format!("Supporting evidence:\n{text}\n"))
            .unwrap_or_default();
        let prompt = render_with(
            prompts::VALIDATE,
            &base,
            &[
                ("aspect", aug.target.aspect.as_str()),
                ("action", aug.action.as_str()),
                ("original", aug.original_value.as_deref().unwrap_or("N/A (new criterion)")),
                ("value", aug.value.as_deref().unwrap_or("(remove this criterion)")),
                ("strategy", &aug.strategy),
                ("evidence", &ev),
            ],
        );
        match ctx.call(Stage::Validate, iteration, &aug.id, &prompt, Verdict::parse) {
            Ok(v) => aug.validation = v.tier,
            Err(e) => {
                log::warn!("iteration {iteration}: judge failed on {}: {e}", aug.id);
                aug.validation = ValidationTier::Pending;
            }
        }
        if aug.validation.passes() {
            out.passed.push(aug);
        } else {
            out.excluded.push(aug);
        }
    }
    out
}
