//! Failure-mode-specific analysis pipeline producing modification targets.

use std::collections::BTreeMap;

use serde::Serialize;

use super::prompts::{self, render_with, trial_vars};
use super::provider::{AgentContext, Stage, StageError};
use super::schema::{
    parse_classifications, parse_prioritization, parse_tradeoffs, AdverseEventProfile, ClassificationScores,
    DesignPivots, MechanismAnalysis, PriorityOverride, TradeoffItem,
};
use super::tagged::find_block;
use super::{AgentError, Calibration, ImpactLevel, ModificationTarget};
use crate::memory::{adjust_confidence, ConfidenceRules, LocalMemory, StrategicGuidance};
use crate::modification::{ActionType, Category, SlotKey};
use crate::protocol::{Aspect, AspectRef, FailureMode, TrialProtocol};

pub struct AnalysisInput<'a> {
    pub protocol: &'a TrialProtocol,
    pub mode: FailureMode,
    pub iteration: usize,
    /// Warm-start guidance; callers pass an empty list after the first iteration.
    pub guidance: &'a StrategicGuidance,
    pub calibration: &'a Calibration,
    /// `None` disables memory-driven confidence adjustment.
    pub local: Option<&'a LocalMemory>,
    pub rules: &'a ConfidenceRules,
}

/// Pass-through context gathered by the non-target stages.
#[derive(Debug, Clone, Default, Serialize)]
pub struct AnalysisContext {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub adverse_event_profile: Option<AdverseEventProfile>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub efficacy_gap: Option<String>,
    pub classifications: Vec<ClassificationScores>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mechanism: Option<MechanismAnalysis>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pivots: Option<DesignPivots>,
}

impl AnalysisContext {
    fn render(&self) -> String {
        let mut out = String::new();
        if let Some(p) = &self.adverse_event_profile {
            if let Some(t) = &p.primary_toxicity {
                out.push_str(&format!(
                    "Main toxicity: {} (grade {}, incidence {}, {})\n",
                    t.event.as_deref().unwrap_or("?"),
                    t.grade.as_deref().unwrap_or("?"),
                    t.incidence.as_deref().unwrap_or("?"),
                    t.organ_system.as_deref().unwrap_or("?"),
                ));
            }
            if let Some(h) = &p.root_cause_hypothesis {
                out.push_str(&format!("Suspected cause: {h}\n"));
            }
            for g in &p.critical_gaps {
                out.push_str(&format!("Gap: {g}\n"));
            }
        }
        if let Some(g) = &self.efficacy_gap {
            out.push_str(&format!("Efficacy gap: {g}\n"));
        }
        for c in &self.classifications {
            if let Some(t) = &c.target {
                out.push_str(&format!("Role of {t}: {}\n", c.primary_category));
            }
        }
        if let Some(m) = &self.mechanism {
            out.push_str(&format!("Mechanism review: {}\n", m.analysis));
        }
        if let Some(p) = self.pivots.as_ref().and_then(|p| p.summary.as_ref()) {
            out.push_str(&format!("Design direction: {p}\n"));
        }
        if out.is_empty() {
            out
        } else {
            format!("Findings so far:\n{out}")
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AnalysisOutcome {
    pub targets: Vec<ModificationTarget>,
    pub context: AnalysisContext,
    pub failed_stages: Vec<Stage>,
}

fn stages_for(mode: FailureMode) -> &'static [Stage] {
    match mode {
        FailureMode::PoorEnrollment => &[Stage::Classify, Stage::Mechanism, Stage::Tradeoff, Stage::Prioritize],
        FailureMode::SafetyAdverseEffect | FailureMode::LackOfEfficacy => &[
            Stage::Profile,
            Stage::Classify,
            Stage::Mechanism,
            Stage::Pivots,
            Stage::Tradeoff,
            Stage::Prioritize,
        ],
    }
}

fn focus(mode: FailureMode) -> &'static str {
    match mode {
        FailureMode::PoorEnrollment => "Concentrate on what keeps eligible patients from enrolling.",
        FailureMode::SafetyAdverseEffect => {
            "Concentrate on lowering toxicity; dosage changes may only reduce exposure."
        }
        FailureMode::LackOfEfficacy => {
            "Concentrate on making benefit detectable: responder enrichment, adequate exposure, a feasible endpoint."
        }
    }
}

fn ordering_rule(mode: FailureMode) -> &'static str {
    match mode {
        FailureMode::PoorEnrollment => "Order by how confident you are that the change lifts enrollment.",
        FailureMode::SafetyAdverseEffect => "Put changes that cut toxicity first; everything else after.",
        FailureMode::LackOfEfficacy => {
            "Group changes into primary, secondary and tertiary tiers and prefer the simplest change within a tier."
        }
    }
}

/// Category inferred when neither classification nor trade-off supplied one.
fn infer_category(target: &AspectRef, action: ActionType) -> Option<Category> {
    match (target.aspect, action) {
        (Aspect::InclusionCriteria, ActionType::Add) => Some(Category::EnrichmentCriterion),
        (Aspect::ExclusionCriteria, ActionType::Add) => Some(Category::SafetyExclusion),
        (a, _) if a.is_list() => Some(Category::SelectionCriterion),
        _ => None,
    }
}

fn target_from_item(
    item: &TradeoffItem,
    p: &TrialProtocol,
    classes: &BTreeMap<AspectRef, Category>,
    calibration: &Calibration,
) -> Option<ModificationTarget> {
    let action = item.recommendation.action()?;
    let mut target = item.target;
    match action {
        ActionType::Add => {
            if !target.aspect.is_list() {
                log::warn!("dropping ADD on single-value aspect {target}");
                return None;
            }
            target.index = None;
        }
        ActionType::Delete | ActionType::Modify => {
            if target.aspect.is_list() && target.index.is_none() {
                log::warn!("dropping {action} on {target} without an index");
                return None;
            }
            if action == ActionType::Delete && !target.aspect.is_list() {
                log::warn!("dropping DELETE on single-value aspect {target}");
                return None;
            }
            if target.validate_against(p).is_err() {
                log::warn!("dropping {action} on {target}: no such element");
                return None;
            }
        }
    }
    let strategy = item
        .strategy
        .clone()
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| item.reasoning.clone());
    let category = classes
        .get(&target)
        .copied()
        .filter(|_| target.index.is_some())
        .or(item.category)
        .or_else(|| infer_category(&target, action));
    Some(ModificationTarget::new(
        target,
        action,
        strategy,
        calibration.apply(item.confidence),
        item.impact.unwrap_or(ImpactLevel::Major),
        category,
    ))
}

fn apply_overrides(targets: &mut [ModificationTarget], overrides: &[PriorityOverride], calibration: &Calibration) {
    for o in overrides {
        for t in targets.iter_mut() {
            let same_target = t.target == o.target || (t.action == ActionType::Add && o.target.index.is_none() && t.target.aspect == o.target.aspect);
            if same_target && o.action.is_none_or(|a| a == t.action) {
                t.confidence = calibration.apply(o.confidence);
                t.raw_confidence = t.confidence;
            }
        }
    }
}

/// Sorts by confidence descending, then slot and action for determinism.
pub fn sort_targets(targets: &mut [ModificationTarget]) {
    targets.sort_by(|a, b| {
        b.confidence
            .total_cmp(&a.confidence)
            .then_with(|| a.slot.cmp(&b.slot))
            .then_with(|| a.action.cmp(&b.action))
    });
}

pub fn run_analysis(ctx: &AgentContext<'_>, input: &AnalysisInput<'_>) -> Result<AnalysisOutcome, AgentError> {
    let p = input.protocol;
    let t = input.iteration;
    let base = trial_vars(p);
    let guidance = prompts::guidance_block(input.guidance);
    let mut context = AnalysisContext::default();
    let mut failed = Vec::new();
    let mut attempted = 0usize;
    let mut items: Option<Vec<TradeoffItem>> = None;
    let mut overrides: Vec<PriorityOverride> = Vec::new();
    let mut last_error: Option<StageError> = None;

    for &stage in stages_for(input.mode) {
        attempted += 1;
        let ctx_text = context.render();
        let result: Result<(), StageError> = match stage {
            Stage::Profile if input.mode == FailureMode::SafetyAdverseEffect => {
                let prompt = render_with(prompts::PROFILE_SAFETY, &base, &[]);
                ctx.call(stage, t, "", &prompt, AdverseEventProfile::parse)
                    .map(|v| context.adverse_event_profile = Some(v))
            }
            Stage::Profile => {
                let prompt = render_with(prompts::PROFILE_EFFICACY, &base, &[]);
                ctx.call(stage, t, "", &prompt, |s| find_block(s, "efficacy_gap_profile").map(|b| b.text()))
                    .map(|v| context.efficacy_gap = Some(v))
            }
            Stage::Classify => {
                let prompt = render_with(
                    prompts::CLASSIFY,
                    &base,
                    &[
                        ("context", &ctx_text),
                        ("strategic_guidance", &guidance),
                        ("criteria", &prompts::criteria_block(p)),
                    ],
                );
                ctx.call(stage, t, "", &prompt, parse_classifications)
                    .map(|v| context.classifications = v)
            }
            Stage::Mechanism => {
                let prompt = render_with(
                    prompts::MECHANISM,
                    &base,
                    &[("context", &ctx_text), ("criteria", &prompts::criteria_block(p))],
                );
                ctx.call(stage, t, "", &prompt, MechanismAnalysis::parse)
                    .map(|v| context.mechanism = Some(v))
            }
            Stage::Pivots => {
                let prompt = render_with(prompts::PIVOTS, &base, &[("context", &ctx_text)]);
                ctx.call(stage, t, "", &prompt, DesignPivots::parse)
                    .map(|v| context.pivots = Some(v))
            }
            Stage::Tradeoff => {
                let prompt = render_with(
                    prompts::TRADEOFF,
                    &base,
                    &[
                        ("focus", focus(input.mode)),
                        ("context", &ctx_text),
                        ("strategic_guidance", &guidance),
                        ("elements", &prompts::elements_block(p)),
                    ],
                );
                ctx.call(stage, t, "", &prompt, parse_tradeoffs).map(|v| items = Some(v))
            }
            Stage::Prioritize => {
                let pending = collect_targets(p, &context, items.as_deref(), input.calibration);
                if pending.is_empty() {
                    attempted -= 1;
                    continue;
                }
                let lines: String = pending
                    .iter()
                    .map(|t| {
                        format!(
                            "<target aspect_name=\"{}\" index=\"{}\" action=\"{}\">{:.2}</target> {}\n",
                            t.target.aspect,
                            t.target.index.map_or("None".to_owned(), |i| i.to_string()),
                            t.action,
                            t.confidence,
                            t.strategy
                        )
                    })
                    .collect();
                let prompt = render_with(
                    prompts::PRIORITIZE,
                    &base,
                    &[("ordering_rule", ordering_rule(input.mode)), ("targets", &lines)],
                );
                ctx.call(stage, t, "", &prompt, parse_prioritization).map(|v| overrides = v)
            }
            _ => unreachable!("not an analysis stage"),
        };
        if let Err(e) = result {
            log::warn!("iteration {t}: {stage} stage skipped: {e}");
            failed.push(stage);
            last_error = Some(e);
        }
    }

    if attempted > 0 && failed.len() == attempted {
        let msg = last_error.map(|e| e.to_string()).unwrap_or_default();
        return Err(AgentError::ProviderFailure(msg));
    }

    let mut targets = collect_targets(p, &context, items.as_deref(), input.calibration);
    apply_overrides(&mut targets, &overrides, input.calibration);
    if let Some(local) = input.local {
        targets = adjust_confidence(targets, local, input.rules);
    }
    sort_targets(&mut targets);
    if targets.is_empty() {
        return Err(AgentError::EmptyAnalysis);
    }
    Ok(AnalysisOutcome {
        targets,
        context,
        failed_stages: failed,
    })
}

fn collect_targets(
    p: &TrialProtocol,
    context: &AnalysisContext,
    items: Option<&[TradeoffItem]>,
    calibration: &Calibration,
) -> Vec<ModificationTarget> {
    let classes: BTreeMap<AspectRef, Category> = context
        .classifications
        .iter()
        .filter_map(|c| c.target.map(|t| (t, c.primary_category)))
        .collect();
    let mut by_key: BTreeMap<(SlotKey, ActionType), ModificationTarget> = BTreeMap::new();
    let mut push = |t: ModificationTarget| {
        let key = (t.slot.clone(), t.action);
        match by_key.get(&key) {
            Some(prev) if prev.confidence >= t.confidence => {}
            _ => {
                by_key.insert(key, t);
            }
        }
    };
    if let Some(text) = context.mechanism.as_ref().and_then(|m| m.missing_enrichment.as_ref()) {
        let aspect = MechanismAnalysis::enrichment_aspect(text);
        let category = if aspect == Aspect::InclusionCriteria {
            Category::EnrichmentCriterion
        } else {
            Category::SafetyExclusion
        };
        push(ModificationTarget::new(
            AspectRef::whole(aspect),
            ActionType::Add,
            text.clone(),
            calibration.apply(super::DEFAULT_ENRICHMENT_CONFIDENCE),
            ImpactLevel::Major,
            Some(category),
        ));
    }
    for item in items.unwrap_or_default() {
        if let Some(t) = target_from_item(item, p, &classes, calibration) {
            push(t);
        }
    }
    by_key.into_values().collect()
}
