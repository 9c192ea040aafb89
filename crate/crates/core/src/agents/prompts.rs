//! Prompt templates and rendering helpers.
//!
//! Templates live in `templates/` and use `{{name}}` placeholders.

use crate::memory::{StrategicGuidance, TierLists};
use crate::protocol::{Aspect, FailureMode, TrialProtocol};

/// Bumped whenever any template text changes.
pub const TEMPLATE_VERSION: &str = "1.0.0";

pub const PROFILE_SAFETY: &str = include_str!("../../templates/profile_safety.txt");
pub const PROFILE_EFFICACY: &str = include_str!("../../templates/profile_efficacy.txt");
pub const CLASSIFY: &str = include_str!("../../templates/classify.txt");
pub const MECHANISM: &str = include_str!("../../templates/mechanism.txt");
pub const PIVOTS: &str = include_str!("../../templates/pivots.txt");
pub const TRADEOFF: &str = include_str!("../../templates/tradeoff.txt");
pub const PRIORITIZE: &str = include_str!("../../templates/prioritize.txt");
pub const AUGMENT: &str = include_str!("../../templates/augment.txt");
pub const INSTRUCTIONS_ELIGIBILITY: &str = include_str!("../../templates/instructions_eligibility.txt");
pub const INSTRUCTIONS_ADD: &str = include_str!("../../templates/instructions_add.txt");
pub const INSTRUCTIONS_DOSAGE_SAFETY: &str = include_str!("../../templates/instructions_dosage_safety.txt");
pub const INSTRUCTIONS_DOSAGE_EFFICACY: &str = include_str!("../../templates/instructions_dosage_efficacy.txt");
pub const INSTRUCTIONS_GENERIC: &str = include_str!("../../templates/instructions_generic.txt");
pub const INSTRUCTIONS_OUTCOME: &str = include_str!("../../templates/instructions_outcome.txt");
pub const FORMAT_PLAIN: &str = include_str!("../../templates/format_plain.txt");
pub const FORMAT_DOSAGE: &str = include_str!("../../templates/format_dosage.txt");
pub const VALIDATE: &str = include_str!("../../templates/validate.txt");
pub const SUMMARIZE: &str = include_str!("../../templates/summarize.txt");

/// Opening marker of the warm-start section; absent from prompts without guidance.
pub const GUIDANCE_MARKER: &str = "<strategic_guidance>";

/// Replaces every `{{key}}` with its value. Unknown placeholders are left intact.
pub fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = template.to_owned();
    for (k, v) in vars {
        out = out.replace(&format!("{{{{{k}}}}}"), v);
    }
    debug_assert!(!out.contains("{{"), "unfilled placeholder in prompt:\n{out}");
    out
}

pub fn mode_label(y: FailureMode) -> &'static str {
    match y {
        FailureMode::PoorEnrollment => "poor enrollment",
        FailureMode::SafetyAdverseEffect => "safety / adverse effects",
        FailureMode::LackOfEfficacy => "lack of efficacy",
    }
}

/// Common trial header variables.
pub fn trial_vars(p: &TrialProtocol) -> Vec<(&'static str, String)> {
    vec![
        ("nct_id", p.nct_id.clone()),
        ("phase", p.phase.to_string()),
        ("condition", p.condition.clone()),
        ("intervention", p.intervention_name.clone()),
        ("dosage", or_none(&p.dosage)),
        ("primary_outcome", or_none(&p.target_primary_outcome)),
        ("adverse_events", or_none(&p.adverse_events)),
        ("failure_mode", mode_label(p.failure_reason).to_owned()),
    ]
}

pub fn or_none(s: &str) -> String {
    if s.trim().is_empty() {
        "(none)".into()
    } else {
        s.to_owned()
    }
}

pub fn render_with(template: &str, base: &[(&'static str, String)], extra: &[(&str, &str)]) -> String {
    let mut vars: Vec<(&str, &str)> = base.iter().map(|(k, v)| (*k, v.as_str())).collect();
    vars.extend_from_slice(extra);
    render(template, &vars)
}

/// Criteria rendered as `<criterion aspect_name=.. index=..>` blocks.
pub fn criteria_block(p: &TrialProtocol) -> String {
    let mut out = String::new();
    for aspect in [Aspect::InclusionCriteria, Aspect::ExclusionCriteria] {
        for (i, c) in p.list(aspect).into_iter().flatten().enumerate() {
            out.push_str(&format!("<criterion aspect_name=\"{aspect}\" index=\"{i}\">{c}</criterion>\n"));
        }
    }
    if out.is_empty() {
        out.push_str("(no criteria)\n");
    }
    out
}

/// All four modifiable elements.
pub fn elements_block(p: &TrialProtocol) -> String {
    let mut out = criteria_block(p);
    out.push_str(&format!("<element aspect_name=\"dosage\">{}</element>\n", or_none(&p.dosage)));
    out.push_str(&format!(
        "<element aspect_name=\"target_primary_outcome\">{}</element>\n",
        or_none(&p.target_primary_outcome)
    ));
    out
}

/// Warm-start section, or an empty string when there is nothing to inject.
pub fn guidance_block(guidance: &StrategicGuidance) -> String {
    if guidance.is_empty() {
        return String::new();
    }
    let mut out = format!("{GUIDANCE_MARKER}\nLessons from earlier redesigns of trials with this failure mode:\n");
    for e in guidance.iter() {
        out.push_str(&format!(
            "- [{}] {} (n={}, mean reward {:.4}, success rate {:.2})\n",
            e.key, e.recommendation, e.support.n, e.support.mean_r, e.support.success_rate
        ));
    }
    out.push_str("</strategic_guidance>\n");
    out
}

/// Tier-stratified exemplars for one slot, or an empty string.
pub fn few_shot_block(tiers: Option<&TierLists>) -> String {
    let Some(t) = tiers.filter(|t| !t.is_empty()) else {
        return String::new();
    };
    let mut out = String::from("<few_shot_examples>\nEarlier attempts on this same element:\n");
    for (label, items) in [
        ("EXCELLENT", &t.excellent),
        ("GOOD", &t.good),
        ("MODERATE", &t.moderate),
        ("BAD", &t.bad),
        ("BANNED", &t.banned),
    ] {
        if items.is_empty() {
            continue;
        }
        out.push_str(&format!("\n{label}:\n"));
        for v in items {
            out.push_str(&format!("  - {v}\n"));
        }
    }
    out.push_str(
        "\nBuild on the EXCELLENT and GOOD entries, steer away from BAD ones, and do not repeat anything BANNED.\n</few_shot_examples>\n",
    );
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_replaces_all() {
        assert_eq!(render("a {{x}} b {{x}} {{y}}", &[("x", "1"), ("y", "2")]), "a 1 b 1 2");
    }

    #[test]
    fn every_template_is_nonempty() {
        for t in [
            PROFILE_SAFETY, PROFILE_EFFICACY, CLASSIFY, MECHANISM, PIVOTS, TRADEOFF, PRIORITIZE, AUGMENT,
            INSTRUCTIONS_ELIGIBILITY, INSTRUCTIONS_ADD, INSTRUCTIONS_DOSAGE_SAFETY, INSTRUCTIONS_DOSAGE_EFFICACY,
            INSTRUCTIONS_OUTCOME, INSTRUCTIONS_GENERIC, FORMAT_PLAIN, FORMAT_DOSAGE, VALIDATE, SUMMARIZE,
        ] {
            assert!(!t.trim().is_empty());
        }
    }

    #[test]
    fn empty_guidance_renders_nothing() {
        assert_eq!(guidance_block(&StrategicGuidance::default()), "");
        assert_eq!(few_shot_block(None), "");
    }
}
