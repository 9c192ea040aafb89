//! Variant generation for each selected target.

use std::collections::BTreeSet;

use super::prompts::{self, render, render_with, trial_vars};
use super::provider::{AgentContext, Stage};
use super::schema::parse_augmentations;
use super::{AgentError, ModificationTarget};
use crate::memory::TacticalExemplars;
use crate::modification::{ActionType, Augmentation, Position};
use crate::protocol::{Aspect, FailureMode, TrialProtocol};

pub struct AugmentInput<'a> {
    pub protocol: &'a TrialProtocol,
    pub mode: FailureMode,
    pub iteration: usize,
    pub tactical: &'a TacticalExemplars,
}

fn instructions(mode: FailureMode, t: &ModificationTarget) -> String {
    match (t.target.aspect, t.action) {
        (_, ActionType::Add) => prompts::INSTRUCTIONS_ADD.to_owned(),
        (Aspect::Dosage, _) => match mode {
            FailureMode::SafetyAdverseEffect => prompts::INSTRUCTIONS_DOSAGE_SAFETY.to_owned(),
            FailureMode::LackOfEfficacy => prompts::INSTRUCTIONS_DOSAGE_EFFICACY.to_owned(),
            FailureMode::PoorEnrollment => prompts::INSTRUCTIONS_GENERIC.to_owned(),
        },
        (Aspect::TargetPrimaryOutcome, _) => {
            let focus = match mode {
                FailureMode::SafetyAdverseEffect => "Build in safety qualifications such as monitoring windows or stopping rules.",
                FailureMode::LackOfEfficacy => "Move to an endpoint this design can realistically shift.",
                FailureMode::PoorEnrollment => "Keep it measurable for the population that can actually be recruited.",
            };
            render(prompts::INSTRUCTIONS_OUTCOME, &[("outcome_focus", focus)])
        }
        _ => prompts::INSTRUCTIONS_ELIGIBILITY.to_owned(),
    }
}

fn original_text(p: &TrialProtocol, t: &ModificationTarget) -> Option<String> {
    match t.action {
        ActionType::Add => None,
        _ => p.resolve(&t.target).map(str::to_owned),
    }
}

/// Generates up to `n` variants per target.
///
/// DELETE targets produce a single augmentation without a provider call.
/// Variants matching a banned exemplar for the slot, duplicates, and
/// variants that would not change the protocol are dropped.
pub fn run_augment(
    ctx: &AgentContext<'_>,
    input: &AugmentInput<'_>,
    targets: &[(ModificationTarget, usize)],
) -> Result<Vec<Augmentation>, AgentError> {
    let p = input.protocol;
    let base = trial_vars(p);
    let mut out = Vec::new();
    for (t, n) in targets {
        let n = (*n).max(1);
        let tag = match &t.slot.position {
            Position::Append(tag) => tag.clone(),
            _ => String::new(),
        };
        let original = original_text(p, t);
        let finish = |mut a: Augmentation| {
            a.category = t.category;
            a.original_value = original.clone();
            a
        };
        if t.action == ActionType::Delete {
            match Augmentation::new(t.target, ActionType::Delete, None, t.strategy.clone(), t.confidence, &tag) {
                Ok(a) => out.push(finish(a)),
                Err(e) => log::warn!("skipping delete on {}: {e}", t.target),
            }
            continue;
        }
        let tiers = input.tactical.get(&t.slot);
        let is_dosage = t.target.aspect == Aspect::Dosage;
        let prompt = render_with(
            prompts::AUGMENT,
            &base,
            &[
                ("aspect", t.target.aspect.as_str()),
                ("action", t.action.as_str()),
                ("original", original.as_deref().unwrap_or("N/A (new criterion)")),
                ("strategy", &t.strategy),
                ("n", &n.to_string()),
                ("instructions", &instructions(input.mode, t)),
                ("few_shot", &prompts::few_shot_block(tiers)),
                ("output_format", if is_dosage { prompts::FORMAT_DOSAGE } else { prompts::FORMAT_PLAIN }),
            ],
        );
        let subject = t.slot.to_string();
        let variants = match ctx.call(Stage::Augment, input.iteration, &subject, &prompt, parse_augmentations) {
            Ok(v) => v,
            Err(e) => {
                log::warn!("iteration {}: no variants for {subject}: {e}", input.iteration);
                continue;
            }
        };
        let mut seen = BTreeSet::new();
        let mut kept = 0usize;
        for v in variants {
            if kept == n {
                break;
            }
            if !seen.insert(v.value.clone()) {
                continue;
            }
            if tiers.is_some_and(|tl| tl.banned.contains(&v.value)) {
                log::info!("dropping banned variant for {subject}: {:?}", v.value);
                continue;
            }
            let aug = match Augmentation::new(t.target, t.action, Some(v.value), t.strategy.clone(), t.confidence, &tag) {
                Ok(a) => finish(a),
                Err(e) => {
                    log::warn!("skipping variant for {subject}: {e}");
                    continue;
                }
            };
            if aug.is_noop_on(p) {
                continue;
            }
            out.push(aug);
            kept += 1;
        }
    }
    if out.is_empty() && !targets.is_empty() {
        return Err(AgentError::AllTargetsEmpty);
    }
    Ok(out)
}
