use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;

use reprotocol::agents::{
    parse_augmentations, parse_classifications, parse_tagged, parse_tradeoffs, run_analysis, run_augment,
    run_validate, AdverseEventProfile, AgentContext, AgentError, AgentOutput, AnalysisInput, AugmentInput,
    Calibration, DesignPivots, MechanismAnalysis, ParseError, Parsed, Schema, Stage, Verdict,
};
use reprotocol::memory::{distill, ConfidenceRules, LocalMemory, StrategicGuidance, TacticalExemplars};
use reprotocol::{
    parse_protocol, ProtocolError, ActionType, Aspect, AspectRef, Augmentation, Category, FailureMode, ModificationTarget,
    RewardRecord, ScriptedPlaybook, ScriptedProvider, TrialProtocol, ValidationTier,
};

fn fixture(name: &str) -> String {
    let p: PathBuf = [env!("CARGO_MANIFEST_DIR"), "tests", "fixtures", name].iter().collect();
    fs::read_to_string(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

fn enrollment_case() -> TrialProtocol {
    parse_protocol(&fixture("nct01298752.json")).unwrap()
}

#[test]
fn classification_sample() {
    let c = parse_classifications(&fixture("classification.txt")).unwrap();
    assert_eq!(c.len(), 1);
    let c = &c[0];
    assert_eq!(c.target, Some(AspectRef::list_item(Aspect::InclusionCriteria, 1)));
    assert_eq!(c.participation_barrier, Some(0.92));
    assert_eq!(c.safety_exclusion, Some(0.05));
    assert_eq!(c.selection_criterion, Some(0.20));
    assert_eq!(c.enrichment_criterion, Some(0.10));
    assert_eq!(c.primary_category, Category::ParticipationBarrier);
    assert!(c.reasoning.starts_with("Waiting requirement"));
    assert!(!c.reasoning.contains('\n'));
}

#[test]
fn mechanism_sample() {
    let m = MechanismAnalysis::parse(&fixture("mechanism.txt")).unwrap();
    assert!(m.analysis.starts_with("Current criteria define cataract surgery candidates"));
    let add = m.missing_enrichment.unwrap();
    assert!(add.contains("anterior chamber cell grade"));
}

#[test]
fn adverse_event_profile_sample() {
    let p = AdverseEventProfile::parse(&fixture("adverse_event_profile.txt")).unwrap();
    let t = p.primary_toxicity.unwrap();
    assert_eq!(t.event.as_deref(), Some("Hepatotoxicity"));
    assert_eq!(t.grade.as_deref(), Some("3"));
    assert_eq!(t.incidence.as_deref(), Some("25%"));
    assert_eq!(t.organ_system.as_deref(), Some("Liver"));
    assert_eq!(t.priority.as_deref(), Some("CRITICAL"));
    assert_eq!(t.dose_dependent.as_deref(), Some("likely"));
    assert!(p.mechanism_consistency.unwrap().starts_with("UNEXPECTED"));
    assert_eq!(
        p.critical_gaps,
        vec![
            "Exclude patients with baseline AST/ALT >2x ULN".to_owned(),
            "Exclude patients with Child-Pugh Class B or C cirrhosis".to_owned(),
        ]
    );
}

#[test]
fn design_pivots_sample() {
    let d = DesignPivots::parse(&fixture("design_pivots.txt")).unwrap();
    assert_eq!(d.trial_type.as_deref(), Some("PK_SAFETY"));
    assert_eq!(d.endpoint_family.as_deref(), Some("PK_SAFETY"));
    assert_eq!(d.dose_regimen_direction.as_deref(), Some("SIMPLER"));
    assert_eq!(d.route_change.as_deref(), Some("CONSIDER_ALTERNATIVE_ROUTE"));
    assert_eq!(d.sample_size_direction.as_deref(), Some("SMALLER"));
    assert_eq!(d.design_structure.as_deref(), Some("PK_DOSE_FINDING"));
    assert!(d.proposed_primary_outcome.unwrap().starts_with("Area under curve"));
    assert!(d.summary.unwrap().ends_with("to <5%."));
}

#[test]
fn dosage_tradeoff_sample() {
    let items = parse_tradeoffs(&fixture("dosage_tradeoff.txt")).unwrap();
    assert_eq!(items.len(), 1);
    let t = &items[0];
    assert_eq!(t.target, AspectRef::whole(Aspect::Dosage));
    assert_eq!(t.recommendation.action(), Some(ActionType::Modify));
    assert_eq!(t.confidence, 0.85);
    assert_eq!(t.efficacy_signal.as_deref(), Some("++"));
    assert_eq!(t.enrollment.as_deref(), Some("0"));
    assert_eq!(t.safety.as_deref(), Some("-"));
    assert_eq!(t.mechanism_alignment.as_deref(), Some("ALIGNED"));
}

#[test]
fn dosage_augmentation_sample() {
    let v = parse_augmentations(&fixture("dosage_augmentations.txt")).unwrap();
    let values: Vec<&str> = v.iter().map(|x| x.value.as_str()).collect();
    assert_eq!(
        values,
        [
            "50mg oral daily for 28 days",
            "40mg BID (total 80mg daily, fractionated)",
            "50mg on days 1-5, off days 6-7 each week",
        ]
    );
    assert!(v.iter().all(|x| x.rationale.is_some()));
}

#[test]
fn schema_dispatch_matches_direct_parsers() {
    match parse_tagged(&fixture("classification.txt"), Schema::Classification).unwrap() {
        Parsed::Classification(c) => assert_eq!(c.participation_barrier, Some(0.92)),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn agent_output_sample() {
    let doc = AgentOutput::from_json(&fixture("agent_output.json")).unwrap();
    assert_eq!(doc.trial_data, enrollment_case());
    assert_eq!(doc.aspect_li.len(), 3);
    let del = &doc.aspect_li[0];
    assert_eq!(del.analysis.action_type, ActionType::Delete);
    assert_eq!(del.original_value, doc.trial_data.inclusion_criteria[1]);
    let add = &doc.aspect_li[1];
    assert_eq!(add.aspect_index, None);
    assert_eq!(add.augment.augment_val_li.len(), 3);
    assert_eq!(doc.aspect_li[2].aspect_type, "string");
}

#[test]
fn malformed_samples_raise_documented_errors() {
    assert!(matches!(
        parse_augmentations(&fixture("malformed/unclosed_augmentation.txt")),
        Err(ParseError::TruncatedBlock(t)) if t == "augmentation"
    ));
    assert!(matches!(
        parse_classifications(&fixture("malformed/bad_score.txt")),
        Err(ParseError::MalformedNumber { .. })
    ));
    assert!(matches!(
        parse_classifications(&fixture("malformed/score_out_of_range.txt")),
        Err(ParseError::MalformedNumber { .. }) | Err(ParseError::BadValue { .. })
    ));
    assert!(matches!(
        Verdict::parse(&fixture("malformed/verdict_without_tier.txt")),
        Err(ParseError::MissingField { field, .. }) if field == "tier"
    ));
    assert!(matches!(
        parse_tradeoffs(&fixture("malformed/unknown_recommendation.txt")),
        Err(ParseError::BadValue { .. })
    ));
    assert!(matches!(
        parse_tradeoffs(&fixture("malformed/no_tags.txt")),
        Err(ParseError::NoBlockFound(_))
    ));
    let err = AgentOutput::from_json(&fixture("malformed/agent_output_bad_index.json")).unwrap_err();
    assert!(matches!(err, ProtocolError::MalformedDocument(ref m) if m.contains("index")), "{err}");
    assert_eq!(parse_augmentations("<augmentations></augmentations>").unwrap(), vec![]);
}

fn enrollment_playbook() -> ScriptedPlaybook {
    let mut pb = ScriptedPlaybook::new();
    pb.add(Stage::Classify, None, None, fixture("classification.txt"));
    pb.add(Stage::Mechanism, None, None, fixture("mechanism.txt"));
    pb.add(
        Stage::Tradeoff,
        None,
        None,
        "<tradeoffs><tradeoff aspect_name=\"eligibility/inclusion_criteria\" index=\"1\">\
         <recommendation>DELETE</recommendation><confidence>0.9</confidence>\
         <strategy>Remove the fellow-eye waiting rule</strategy></tradeoff></tradeoffs>",
    );
    pb.add(Stage::Prioritize, None, None, "<prioritization></prioritization>");
    pb
}

fn analyze(
    p: &TrialProtocol,
    pb: ScriptedPlaybook,
    mode: FailureMode,
    local: Option<&LocalMemory>,
) -> Result<Vec<ModificationTarget>, AgentError> {
    let provider = ScriptedProvider::new(pb);
    let ctx = AgentContext::new(&provider, 0);
    let guidance = StrategicGuidance::default();
    let rules = ConfidenceRules::default();
    run_analysis(
        &ctx,
        &AnalysisInput {
            protocol: p,
            mode,
            iteration: 1,
            guidance: &guidance,
            calibration: &Calibration::Identity,
            local,
            rules: &rules,
        },
    )
    .map(|o| o.targets)
}

#[test]
fn enrollment_case_targets() {
    let p = enrollment_case();
    assert!(p.inclusion_criteria[1].contains("wait to undergo cataract surgery"));
    let targets = analyze(&p, enrollment_playbook(), FailureMode::PoorEnrollment, None).unwrap();
    let del = targets
        .iter()
        .find(|t| t.action == ActionType::Delete)
        .expect("delete target");
    assert_eq!(del.target, AspectRef::list_item(Aspect::InclusionCriteria, 1));
    assert!((del.confidence - 0.9).abs() < 1e-12);
    assert_eq!(del.category, Some(Category::ParticipationBarrier));
    let adds: Vec<_> = targets.iter().filter(|t| t.action == ActionType::Add).collect();
    assert_eq!(adds.len(), 1);
    assert_eq!(adds[0].category, Some(Category::EnrichmentCriterion));
    assert_eq!(targets[0].action, ActionType::Delete);
}

#[test]
fn empty_classification_and_pivots_is_empty_analysis() {
    let mut pb = ScriptedPlaybook::new();
    for s in [Stage::Profile, Stage::Classify, Stage::Mechanism, Stage::Pivots] {
        pb.add(s, None, None, "");
    }
    pb.add(Stage::Classify, None, None, "nothing stands out");
    pb.add(Stage::Mechanism, None, None, "<mechanism_analysis>Aligned.</mechanism_analysis>");
    pb.add(Stage::Profile, None, None, "<adverse_event_profile></adverse_event_profile>");
    pb.add(Stage::Pivots, None, None, "<design_pivots></design_pivots>");
    pb.add(Stage::Tradeoff, None, None, "<tradeoffs></tradeoffs>");
    let err = analyze(&enrollment_case(), pb, FailureMode::SafetyAdverseEffect, None).unwrap_err();
    assert!(matches!(err, AgentError::EmptyAnalysis));
}

#[test]
fn failed_slot_gets_zero_confidence_and_sorts_last() {
    let p = enrollment_case();
    let del = Augmentation::new(
        AspectRef::list_item(Aspect::InclusionCriteria, 1),
        ActionType::Delete,
        None,
        "Remove the fellow-eye waiting rule",
        0.9,
        "",
    )
    .unwrap();
    let mut augs = BTreeMap::new();
    augs.insert(del.id.clone(), del.clone());
    let rewards = vec![RewardRecord {
        augmentation_id: del.id.clone(),
        r: Some(-0.02),
        n_with: 1,
        n_without: 1,
        v: ValidationTier::Good,
    }];
    let mut local = LocalMemory::default();
    let d = distill(&rewards, &augs, &[]);
    local.record(1, rewards, &augs, d, true);

    let targets = analyze(&p, enrollment_playbook(), FailureMode::PoorEnrollment, Some(&local)).unwrap();
    let last = targets.last().unwrap();
    assert_eq!(last.action, ActionType::Delete);
    assert_eq!(last.confidence, 0.0);
    assert!(targets[0].confidence > 0.0);
}

fn dosage_target() -> ModificationTarget {
    ModificationTarget::new(
        AspectRef::whole(Aspect::Dosage),
        ActionType::Modify,
        "Lower the exposure".into(),
        0.8,
        reprotocol::ImpactLevel::Major,
        None,
    )
}

fn dosage_protocol() -> TrialProtocol {
    let mut p = enrollment_case();
    p.failure_reason = FailureMode::SafetyAdverseEffect;
    p.dosage = "100mg oral daily for 28 days".into();
    p
}

#[test]
fn safety_dosage_augmentation() {
    let p = dosage_protocol();
    let mut pb = ScriptedPlaybook::new();
    pb.add(Stage::Augment, None, None, fixture("dosage_augmentations.txt"));
    let provider = ScriptedProvider::new(pb);
    let ctx = AgentContext::new(&provider, 0);
    let tactical = TacticalExemplars::default();
    let input = AugmentInput {
        protocol: &p,
        mode: FailureMode::SafetyAdverseEffect,
        iteration: 1,
        tactical: &tactical,
    };
    let augs = run_augment(&ctx, &input, &[(dosage_target(), 3)]).unwrap();
    let values: Vec<&str> = augs.iter().filter_map(|a| a.value.as_deref()).collect();
    assert!(values.contains(&"50mg oral daily for 28 days"));
    assert!(values.iter().any(|v| v.starts_with("40mg BID")));
    assert!(augs.iter().all(|a| a.validation == ValidationTier::Pending));

    let one = run_augment(&ctx, &input, &[(dosage_target(), 1)]).unwrap();
    assert_eq!(one.len(), 1);
}

#[test]
fn banned_exemplar_value_is_dropped() {
    let p = dosage_protocol();
    let target = dosage_target();
    let mut tactical = TacticalExemplars::default();
    tactical.place(&target.slot, "50mg oral daily for 28 days", ValidationTier::Banned);
    let mut pb = ScriptedPlaybook::new();
    pb.add(Stage::Augment, None, None, fixture("dosage_augmentations.txt"));
    let provider = ScriptedProvider::new(pb);
    let ctx = AgentContext::new(&provider, 0);
    let input = AugmentInput {
        protocol: &p,
        mode: FailureMode::SafetyAdverseEffect,
        iteration: 2,
        tactical: &tactical,
    };
    let augs = run_augment(&ctx, &input, &[(target, 3)]).unwrap();
    let values: Vec<&str> = augs.iter().filter_map(|a| a.value.as_deref()).collect();
    assert_eq!(values.len(), 2);
    assert!(!values.contains(&"50mg oral daily for 28 days"));
}

fn verdict(tier: &str) -> String {
    format!("<verdict><tier>{tier}</tier><reason>scripted</reason></verdict>")
}

#[test]
fn validation_keeps_exactly_the_passing_tiers() {
    let p = dosage_protocol();
    let tiers = [
        "EXCELLENT", "GOOD", "MODERATE", "BAD", "BANNED", "GOOD", "BAD", "EXCELLENT", "BANNED", "MODERATE",
    ];
    let mut pb = ScriptedPlaybook::new();
    let mut augs = Vec::new();
    for (i, tier) in tiers.iter().enumerate() {
        let a = Augmentation::new(
            AspectRef::whole(Aspect::Dosage),
            ActionType::Modify,
            Some(format!("{}mg oral daily for 28 days", 10 + i)),
            "Lower the exposure",
            0.8,
            "",
        )
        .unwrap();
        pb.add(Stage::Validate, None, Some(&a.id), verdict(tier));
        augs.push(a);
    }
    let provider = ScriptedProvider::new(pb);
    let ctx = AgentContext::new(&provider, 0);
    let out = run_validate(&ctx, augs.clone(), &p, 1, None);

    let expected: Vec<&str> = augs
        .iter()
        .zip(tiers)
        .filter(|(_, t)| !matches!(*t, "BAD" | "BANNED"))
        .map(|(a, _)| a.id.as_str())
        .collect();
    let mut got: Vec<&str> = out.passed.iter().map(|a| a.id.as_str()).collect();
    got.sort();
    let mut want = expected.clone();
    want.sort();
    assert_eq!(got, want);
    assert_eq!(out.excluded.len(), 4);
    assert_eq!(out.banned().count(), 2);
    assert!(out.passed.iter().all(|a| a.validation.passes()));
}

#[test]
fn all_good_passes_everything() {
    let p = dosage_protocol();
    let mut pb = ScriptedPlaybook::new();
    pb.add(Stage::Validate, None, None, verdict("GOOD"));
    let augs: Vec<Augmentation> = (0..3)
        .map(|i| {
            Augmentation::new(
                AspectRef::whole(Aspect::Dosage),
                ActionType::Modify,
                Some(format!("{}mg oral daily", 20 + i)),
                "s",
                0.5,
                "",
            )
            .unwrap()
        })
        .collect();
    let provider = ScriptedProvider::new(pb);
    let out = run_validate(&AgentContext::new(&provider, 0), augs, &p, 1, None);
    assert_eq!(out.passed.len(), 3);
    assert!(out.excluded.is_empty());
}
