//! Benchmark fixtures: a protocol with `groups` criteria, each with `options`
//! modify variants, scored by a reference oracle with one rule per variant.

use std::collections::BTreeMap;

use reprotocol::explore::ChoiceGroup;
use reprotocol::oracle::{Scope, ScoringRule};
use reprotocol::{
    ActionType, Aspect, AspectRef, Augmentation, FailureMode, Phase, ReferenceOracle, ScoringSpec, TrialProtocol,
    ValidationTier,
};

pub struct Fixture {
    pub base: TrialProtocol,
    pub groups: Vec<ChoiceGroup>,
    pub oracle: ReferenceOracle,
}

pub fn fixture(groups: usize, options: usize) -> Fixture {
    let base = TrialProtocol {
        nct_id: format!("BENCH{groups:02}{options:02}"),
        phase: Phase::Phase2,
        condition: "Condition".into(),
        intervention_name: "Drug".into(),
        failure_reason: FailureMode::PoorEnrollment,
        adverse_events: String::new(),
        inclusion_criteria: (0..groups).map(|i| format!("base criterion {i}")).collect(),
        exclusion_criteria: vec!["Pregnancy".into()],
        dosage: "10mg daily".into(),
        target_primary_outcome: "Response at week 12".into(),
        extras: BTreeMap::new(),
    };
    let mut rules = Vec::new();
    let groups: Vec<ChoiceGroup> = (0..groups)
        .map(|i| {
            let mut opts: Vec<Augmentation> = (0..options)
                .map(|k| {
                    let token = format!("variant {i}.{k}");
                    let w = (((i * 7 + k * 13) % 11) as f64 - 5.0) / 1000.0;
                    rules.push(ScoringRule::literal(token.clone(), Scope::default(), w));
                    let mut a = Augmentation::new(
                        AspectRef::list_item(Aspect::InclusionCriteria, i),
                        ActionType::Modify,
                        Some(token),
                        "",
                        0.3 + 0.05 * k as f64,
                        "",
                    )
                    .expect("valid modify");
                    a.validation = ValidationTier::Good;
                    a
                })
                .collect();
            opts.sort_by(|a, b| a.id.cmp(&b.id));
            ChoiceGroup { slot: opts[0].slot.clone(), options: opts }
        })
        .collect();
    let oracle = ReferenceOracle::new(ScoringSpec::new(0.4, rules)).expect("valid spec");
    Fixture { base, groups, oracle }
}
