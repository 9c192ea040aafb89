use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{LocalMemory, Signature};
use crate::agents::ModificationTarget;
use crate::modification::ActionType;

/// Memory-driven confidence adjustment parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceRules {
    /// Multiplicative penalty on slots that already produced a gain.
    pub d: f64,
    /// Additive bonus on slots not yet measured.
    pub b: f64,
    /// Per-action success rates from earlier runs. Empty on a cold start.
    #[serde(default)]
    pub action_rates: BTreeMap<ActionType, f64>,
}

impl Default for ConfidenceRules {
    fn default() -> Self {
        Self {
            d: 0.2,
            b: 0.1,
            action_rates: BTreeMap::new(),
        }
    }
}

/// Rescores targets from what local memory knows about their slots.
///
/// Failed slots get exactly 0, successful slots are scaled by `1 - d`,
/// unexplored slots gain `b`. Known action success rates multiply in.
pub fn adjust_confidence(
    targets: Vec<ModificationTarget>,
    local: &LocalMemory,
    rules: &ConfidenceRules,
) -> Vec<ModificationTarget> {
    targets
        .into_iter()
        .map(|mut t| {
            let seen = local.seen_slots.get(&t.slot);
            let c = match seen {
                Some(o) if o.failed() => 0.0,
                Some(o) if o.succeeded() => t.confidence * (1.0 - rules.d),
                _ => (t.confidence + rules.b).min(1.0),
            };
            let rate = rules.action_rates.get(&t.action).copied().unwrap_or(1.0);
            t.confidence = (c * rate).clamp(0.0, 1.0);
            t
        })
        .collect()
}

/// Parameters of the generation-count rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveN {
    pub base: usize,
    pub v0: f64,
    pub n_max: usize,
}

impl Default for AdaptiveN {
    fn default() -> Self {
        Self {
            base: 3,
            v0: 0.01,
            n_max: 8,
        }
    }
}

/// Variants to request for a pattern: more when it rarely succeeds or
/// its rewards are spread out.
pub fn adaptive_n(signature: Option<&Signature>, p: &AdaptiveN) -> usize {
    let base = p.base.max(1);
    let Some(s) = signature.filter(|s| s.n > 0) else {
        return base.min(p.n_max.max(1));
    };
    let spread = if p.v0 > 0.0 { (s.var_r / p.v0).min(1.0) } else { 1.0 };
    let n = (base as f64 * (2.0 - s.success_rate) * (1.0 + spread)).round() as usize;
    n.clamp(1, p.n_max.max(1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::ImpactLevel;
    use crate::explore::RewardRecord;
    use crate::memory::{distill, Distilled};
    use crate::modification::{Augmentation, ValidationTier};
    use crate::protocol::{Aspect, AspectRef};

    fn target(i: usize, c: f64) -> ModificationTarget {
        ModificationTarget::new(
            AspectRef::list_item(Aspect::InclusionCriteria, i),
            ActionType::Modify,
            String::new(),
            c,
            ImpactLevel::Major,
            None,
        )
    }

    fn memory_with(rewards: &[(usize, f64)]) -> LocalMemory {
        let mut augs = std::collections::BTreeMap::new();
        let mut recs = Vec::new();
        for (i, r) in rewards {
            let mut a = Augmentation::new(
                AspectRef::list_item(Aspect::InclusionCriteria, *i),
                ActionType::Modify,
                Some(format!("v{i}")),
                "",
                0.5,
                "",
            )
            .unwrap();
            a.validation = ValidationTier::Good;
            recs.push(RewardRecord {
                augmentation_id: a.id.clone(),
                r: Some(*r),
                n_with: 1,
                n_without: 1,
                v: a.validation,
            });
            augs.insert(a.id.clone(), a);
        }
        let mut m = LocalMemory::default();
        let d: Distilled = distill(&recs, &augs, &[]);
        m.record(1, recs, &augs, d, true);
        m
    }

    #[test]
    fn three_partitions() {
        let m = memory_with(&[(0, -0.02), (1, 0.05)]);
        let out = adjust_confidence(vec![target(0, 0.9), target(1, 0.8), target(2, 0.95)], &m, &ConfidenceRules::default());
        assert_eq!(out[0].confidence, 0.0);
        assert!((out[1].confidence - 0.64).abs() < 1e-12);
        assert_eq!(out[2].confidence, 1.0);
    }

    #[test]
    fn action_rates_multiply() {
        let mut rules = ConfidenceRules::default();
        rules.action_rates.insert(ActionType::Modify, 0.5);
        let out = adjust_confidence(vec![target(2, 0.5)], &LocalMemory::default(), &rules);
        assert!((out[0].confidence - 0.3).abs() < 1e-12);
    }

    #[test]
    fn adaptive_n_examples() {
        let p = AdaptiveN::default();
        let sig = |sr: f64, var: f64| Signature {
            n: 4,
            success_rate: sr,
            var_r: var,
            ..Default::default()
        };
        assert_eq!(adaptive_n(Some(&sig(1.0, 0.0)), &p), 3);
        assert_eq!(adaptive_n(Some(&sig(0.5, 0.01)), &p), 8);
        assert_eq!(adaptive_n(None, &p), 3);
        assert_eq!(adaptive_n(Some(&sig(0.0, 0.0)), &p), 6);
    }
}
