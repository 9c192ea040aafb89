use std::collections::HashSet;
use std::fs;

use proptest::prelude::*;
use reprotocol::protocol::{canonical_json, sha256_hex};
use reprotocol::{canonicalize, hash_protocol, parse_protocol, FailureMode, Phase, ProtocolError, TrialProtocol};
use serde_json::{json, Value};

fn fixture_text() -> String {
    fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/nct01298752.json")).unwrap()
}

fn doc(inclusion: Vec<String>, exclusion: Vec<String>) -> Value {
    json!({
        "nct_id": "NCT00000001",
        "phase": "Phase 2",
        "condition": "Asthma",
        "intervention/intervention_name": "Drug X",
        "failure_reason": "efficacy",
        "adverse_events": "",
        "eligibility/inclusion_criteria": inclusion,
        "eligibility/exclusion_criteria": exclusion,
        "dosage": "10mg daily",
        "target_primary_outcome": "FEV1 change at week 12",
    })
}

#[test]
fn registry_fixture_parses() {
    let p = parse_protocol(&fixture_text()).unwrap();
    assert_eq!(p.nct_id, "NCT01298752");
    assert_eq!(p.phase, Phase::Phase3);
    assert_eq!(p.failure_reason, FailureMode::PoorEnrollment);
    assert_eq!(p.inclusion_criteria.len(), 4);
    assert_eq!(p.exclusion_criteria.len(), 3);
    assert_eq!(
        p.inclusion_criteria[1],
        "Subjects must be willing to wait to undergo cataract surgery on the fellow eye until after the study has been completed"
    );
    assert_eq!(p.extras["registry_source"], json!("ClinicalTrials.gov"));
}

#[test]
fn empty_criterion_lists_are_accepted() {
    let p = TrialProtocol::from_value(&doc(vec![], vec![])).unwrap();
    assert!(p.inclusion_criteria.is_empty());
    assert!(p.exclusion_criteria.is_empty());
    let again = parse_protocol(&canonicalize(&p)).unwrap();
    assert_eq!(again, p);
}

#[test]
fn missing_failure_reason_is_reported() {
    let mut v = doc(vec!["a".into()], vec![]);
    v.as_object_mut().unwrap().remove("failure_reason");
    assert_eq!(
        TrialProtocol::from_value(&v).unwrap_err(),
        ProtocolError::MissingField("failure_reason".into())
    );
}

#[test]
fn unknown_enum_tokens_are_rejected() {
    let mut v = doc(vec![], vec![]);
    v["phase"] = json!("Phase 9");
    assert!(matches!(TrialProtocol::from_value(&v), Err(ProtocolError::BadEnum { .. })));
    let mut v = doc(vec![], vec![]);
    v["failure_reason"] = json!("funding");
    assert!(matches!(TrialProtocol::from_value(&v), Err(ProtocolError::BadEnum { .. })));
}

#[test]
fn non_json_is_malformed() {
    assert!(matches!(parse_protocol("{not json"), Err(ProtocolError::MalformedDocument(_))));
    assert!(matches!(parse_protocol("[1, 2]"), Err(ProtocolError::MalformedDocument(_))));
}

#[test]
fn canonical_form_is_a_fixed_point() {
    let p = parse_protocol(&fixture_text()).unwrap();
    let once = canonicalize(&p);
    let twice = canonicalize(&parse_protocol(&once).unwrap());
    assert_eq!(once, twice);
    assert!(once.ends_with('\n'));
}

#[test]
fn hash_is_sha256_of_canonical_bytes() {
    let p = parse_protocol(&fixture_text()).unwrap();
    assert_eq!(hash_protocol(&p).to_hex(), sha256_hex(&canonicalize(&p)));
}

#[test]
fn key_order_does_not_change_hash() {
    let text = fixture_text();
    let value: Value = serde_json::from_str(&text).unwrap();
    let obj = value.as_object().unwrap();
    let mut reversed = String::from("{");
    for (i, (k, v)) in obj.iter().rev().enumerate() {
        if i > 0 {
            reversed.push(',');
        }
        reversed.push_str(&format!("{}:{}", json!(k), v));
    }
    reversed.push('}');
    let a = parse_protocol(&text).unwrap();
    let b = parse_protocol(&reversed).unwrap();
    assert_eq!(hash_protocol(&a), hash_protocol(&b));
    assert_eq!(canonical_json(&value), canonicalize(&a));
}

#[test]
fn distinct_protocols_get_distinct_hashes() {
    let mut seen = HashSet::new();
    for i in 0..1000 {
        let p = TrialProtocol::from_value(&doc(
            vec![format!("Criterion variant {i}")],
            if i % 2 == 0 { vec![] } else { vec!["Pregnancy".into()] },
        ))
        .unwrap();
        assert!(seen.insert(hash_protocol(&p)), "collision at {i}");
    }
    assert_eq!(seen.len(), 1000);
}

#[test]
fn single_character_edit_changes_hash() {
    let p = parse_protocol(&fixture_text()).unwrap();
    let mut q = p.clone();
    q.dosage.push('.');
    assert_ne!(hash_protocol(&p), hash_protocol(&q));
}

fn criterion() -> impl Strategy<Value = String> {
    "[A-Za-z0-9 <>=%/.,-]{1,40}".prop_filter("non-blank", |s| !s.trim().is_empty())
}

proptest! {
    #[test]
    fn round_trip_preserves_protocol(
        inc in prop::collection::vec(criterion(), 0..6),
        exc in prop::collection::vec(criterion(), 0..6),
    ) {
        let p = TrialProtocol::from_value(&doc(inc, exc)).unwrap();
        let text = canonicalize(&p);
        let q = parse_protocol(&text).unwrap();
        prop_assert_eq!(&q, &p);
        prop_assert_eq!(canonicalize(&q), text);
        prop_assert_eq!(hash_protocol(&q), hash_protocol(&p));
    }
}
