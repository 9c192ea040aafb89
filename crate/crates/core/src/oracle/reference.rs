use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{OracleError, OutcomeOracle};
use crate::protocol::{canonical_json, sha256_hex, Aspect, TrialProtocol};

/// Which aspects a rule inspects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Scope {
    /// The literal string `"ALL"`.
    All(String),
    Only(Vec<Aspect>),
}

impl Default for Scope {
    fn default() -> Self {
        Scope::All("ALL".into())
    }
}

impl Scope {
    pub fn only(aspects: &[Aspect]) -> Self {
        Scope::Only(aspects.to_vec())
    }

    fn aspects(&self) -> &[Aspect] {
        match self {
            Scope::All(_) => Aspect::ALL,
            Scope::Only(v) => v,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoringRule {
    pub pattern: String,
    /// Treat `pattern` as a regular expression instead of a literal substring.
    #[serde(default)]
    pub regex: bool,
    #[serde(default)]
    pub aspect_scope: Scope,
    pub weight: f64,
}

impl ScoringRule {
    pub fn literal(pattern: impl Into<String>, scope: Scope, weight: f64) -> Self {
        Self {
            pattern: pattern.into(),
            regex: false,
            aspect_scope: scope,
            weight,
        }
    }
}

fn default_clamp() -> [f64; 2] {
    [0.01, 0.99]
}

/// Additive pattern scoring: `clamp(base + sum of matching rule weights)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoringSpec {
    pub base: f64,
    #[serde(default)]
    pub rules: Vec<ScoringRule>,
    #[serde(default = "default_clamp")]
    pub clamp: [f64; 2],
}

impl ScoringSpec {
    pub fn new(base: f64, rules: Vec<ScoringRule>) -> Self {
        Self {
            base,
            rules,
            clamp: default_clamp(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, OracleError> {
        let spec: Self = serde_json::from_str(text).map_err(|e| OracleError::BadSpec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), OracleError> {
        let [lo, hi] = self.clamp;
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo >= hi {
            return Err(OracleError::BadSpec(format!("clamp [{lo}, {hi}] must satisfy 0 <= lo < hi <= 1")));
        }
        if !(0.0..=1.0).contains(&self.base) {
            return Err(OracleError::BadSpec(format!("base {} outside [0, 1]", self.base)));
        }
        if let Some(r) = self
            .rules
            .iter()
            .find(|r| matches!(&r.aspect_scope, Scope::All(s) if s != "ALL"))
        {
            return Err(OracleError::BadSpec(format!("rule {:?}: scope must be \"ALL\" or a list", r.pattern)));
        }
        if let Some(r) = self.rules.iter().find(|r| !r.weight.is_finite()) {
            return Err(OracleError::BadSpec(format!("rule {:?} has a non-finite weight", r.pattern)));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        canonical_json(&serde_json::to_value(self).expect("spec serializes"))
    }
}

enum Matcher {
    Literal(String),
    Pattern(Regex),
}

impl Matcher {
    fn is_match(&self, text: &str) -> bool {
        match self {
            Matcher::Literal(s) => text.contains(s.as_str()),
            Matcher::Pattern(re) => re.is_match(text),
        }
    }
}

/// Deterministic reference backend built from a [`ScoringSpec`].
pub struct ReferenceOracle {
    spec: ScoringSpec,
    matchers: Vec<Matcher>,
    descriptor: String,
}

impl ReferenceOracle {
    pub fn new(spec: ScoringSpec) -> Result<Self, OracleError> {
        spec.validate()?;
        let matchers = spec
            .rules
            .iter()
            .map(|r| {
                if r.regex {
                    Regex::new(&r.pattern)
                        .map(Matcher::Pattern)
                        .map_err(|e| OracleError::BadPattern(format!("{:?}: {e}", r.pattern)))
                } else {
                    Ok(Matcher::Literal(r.pattern.clone()))
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        let descriptor = format!("reference:{}", &sha256_hex(&spec.to_json())[..12]);
        Ok(Self {
            spec,
            matchers,
            descriptor,
        })
    }

    pub fn spec(&self) -> &ScoringSpec {
        &self.spec
    }

    /// Score before clamping.
    pub fn raw_score(&self, p: &TrialProtocol) -> f64 {
        let mut total = self.spec.base;
        for (rule, matcher) in self.spec.rules.iter().zip(&self.matchers) {
            let hit = rule
                .aspect_scope
                .aspects()
                .iter()
                .any(|a| p.aspect_texts(*a).into_iter().any(|t| matcher.is_match(t)));
            if hit {
                total += rule.weight;
            }
        }
        total
    }
}

impl OutcomeOracle for ReferenceOracle {
    fn score(&self, p: &TrialProtocol) -> Result<f64, OracleError> {
        let [lo, hi] = self.spec.clamp;
        Ok(self.raw_score(p).clamp(lo, hi))
    }

    fn descriptor(&self) -> String {
        self.descriptor.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::parse_protocol;

    fn protocol() -> TrialProtocol {
        parse_protocol(
            r#"{"nct_id":"N","phase":"Phase 3","condition":"c","intervention/intervention_name":"i",
            "failure_reason":"enrollment","adverse_events":"Not specified",
            "eligibility/inclusion_criteria":["subjects must be willing to wait to undergo cataract surgery on the fellow eye"],
            "eligibility/exclusion_criteria":[],"dosage":"","target_primary_outcome":"o"}"#,
        )
        .unwrap()
    }

    #[test]
    fn single_negative_rule() {
        let spec = ScoringSpec::new(
            0.5,
            vec![ScoringRule::literal("wait to undergo", Scope::only(&[Aspect::InclusionCriteria]), -0.1)],
        );
        let s = ReferenceOracle::new(spec).unwrap().score(&protocol()).unwrap();
        assert!((s - 0.4).abs() < 1e-12);
    }

    #[test]
    fn empty_rules_give_base() {
        let o = ReferenceOracle::new(ScoringSpec::new(0.37, vec![])).unwrap();
        assert_eq!(o.score(&protocol()).unwrap(), 0.37);
    }

    #[test]
    fn clamps_at_upper_bound() {
        let spec = ScoringSpec::new(0.95, vec![ScoringRule::literal("cataract", Scope::default(), 0.1)]);
        assert_eq!(ReferenceOracle::new(spec).unwrap().score(&protocol()).unwrap(), 0.99);
    }

    #[test]
    fn out_of_scope_rule_ignored() {
        let spec = ScoringSpec::new(0.5, vec![ScoringRule::literal("cataract", Scope::only(&[Aspect::Dosage]), 0.1)]);
        assert_eq!(ReferenceOracle::new(spec).unwrap().score(&protocol()).unwrap(), 0.5);
    }

    #[test]
    fn rule_fires_once() {
        let mut p = protocol();
        p.exclusion_criteria.push("fellow eye cataract".into());
        let spec = ScoringSpec::new(0.5, vec![ScoringRule::literal("cataract", Scope::default(), 0.1)]);
        assert!((ReferenceOracle::new(spec).unwrap().score(&p).unwrap() - 0.6).abs() < 1e-12);
    }

    #[test]
    fn bad_regex_rejected_at_load() {
        let spec = ScoringSpec {
            rules: vec![ScoringRule {
                pattern: "(unclosed".into(),
                regex: true,
                aspect_scope: Scope::default(),
                weight: 0.1,
            }],
            ..ScoringSpec::new(0.5, vec![])
        };
        assert!(matches!(ReferenceOracle::new(spec), Err(OracleError::BadPattern(_))));
    }

    #[test]
    fn spec_json_round_trip() {
        let text = r#"{"base":0.4,"rules":[{"pattern":"a+","regex":true,"aspect_scope":["dosage"],"weight":0.2},
            {"pattern":"b","weight":-0.1}]}"#;
        let spec = ScoringSpec::from_json(text).unwrap();
        assert_eq!(spec.clamp, [0.01, 0.99]);
        assert_eq!(spec.rules[1].aspect_scope, Scope::default());
        assert_eq!(ScoringSpec::from_json(&spec.to_json()).unwrap(), spec);
        assert!(ScoringSpec::from_json(r#"{"base":0.4,"clamp":[0.9,0.1]}"#).is_err());
    }
}
