//! Trial-protocol data model, aspect addressing, canonical serialization and
//! content hashing.
//!
//! The on-disk format is a single JSON object whose keys mirror the agent
//! pipeline's `trial_data` block. Unknown keys are carried in
//! [`TrialProtocol::extras`] so that registry metadata survives a
//! parse/canonicalize round trip.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use serde_json::{Map, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const KEY_NCT_ID: &str = "nct_id";
pub const KEY_PHASE: &str = "phase";
pub const KEY_CONDITION: &str = "condition";
pub const KEY_INTERVENTION: &str = "intervention/intervention_name";
pub const KEY_FAILURE_REASON: &str = "failure_reason";
pub const KEY_ADVERSE_EVENTS: &str = "adverse_events";
pub const KEY_INCLUSION: &str = "eligibility/inclusion_criteria";
pub const KEY_EXCLUSION: &str = "eligibility/exclusion_criteria";
pub const KEY_DOSAGE: &str = "dosage";
pub const KEY_PRIMARY_OUTCOME: &str = "target_primary_outcome";

const REQUIRED_KEYS: [&str; 10] = [
    KEY_NCT_ID,
    KEY_PHASE,
    KEY_CONDITION,
    KEY_INTERVENTION,
    KEY_FAILURE_REASON,
    KEY_ADVERSE_EVENTS,
    KEY_INCLUSION,
    KEY_EXCLUSION,
    KEY_DOSAGE,
    KEY_PRIMARY_OUTCOME,
];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("malformed protocol document: {0}")]
    MalformedDocument(String),
    #[error("missing required field `{0}`")]
    MissingField(String),
    #[error("unrecognised value {value:?} for `{field}`")]
    BadEnum { field: String, value: String },
}

string_enum! {
    /// Clinical development phase.
    Phase {
        Phase1 => "Phase 1",
        Phase2 => "Phase 2",
        Phase3 => "Phase 3",
        Phase4 => "Phase 4",
    }
}

impl FromStr for Phase {
    type Err = ProtocolError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let compact: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        match compact.to_ascii_lowercase().as_str() {
            "phase1" => Ok(Phase::Phase1),
            "phase2" => Ok(Phase::Phase2),
            "phase3" => Ok(Phase::Phase3),
            "phase4" => Ok(Phase::Phase4),
            _ => Err(ProtocolError::BadEnum {
                field: KEY_PHASE.into(),
                value: s.into(),
            }),
        }
    }
}

string_enum! {
    /// Annotated reason the original trial failed.
    FailureMode {
        PoorEnrollment => "enrollment",
        SafetyAdverseEffect => "safety",
        LackOfEfficacy => "efficacy",
    }
}

impl FromStr for FailureMode {
    type Err = ProtocolError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "enrollment" => Ok(FailureMode::PoorEnrollment),
            "safety" => Ok(FailureMode::SafetyAdverseEffect),
            "efficacy" => Ok(FailureMode::LackOfEfficacy),
            other => Err(ProtocolError::BadEnum {
                field: KEY_FAILURE_REASON.into(),
                value: other.into(),
            }),
        }
    }
}

string_enum! {
    /// One of the four modifiable protocol elements.
    Aspect {
        InclusionCriteria => "eligibility/inclusion_criteria",
        ExclusionCriteria => "eligibility/exclusion_criteria",
        Dosage => "dosage",
        TargetPrimaryOutcome => "target_primary_outcome",
    }
}

impl FromStr for Aspect {
    type Err = ProtocolError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Aspect::ALL
            .iter()
            .copied()
            .find(|a| a.as_str() == s.trim())
            .ok_or_else(|| ProtocolError::BadEnum {
                field: "aspect_name".into(),
                value: s.into(),
            })
    }
}

impl Aspect {
    /// LIST aspects hold ordered criteria; STRING aspects hold one value.
    pub fn is_list(self) -> bool {
        matches!(self, Aspect::InclusionCriteria | Aspect::ExclusionCriteria)
    }

    pub fn is_eligibility(self) -> bool {
        self.is_list()
    }
}

/// Address of a modifiable element.
///
/// `index` is present only for LIST aspects that reference an existing
/// criterion. STRING aspects and ADD targets carry no index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AspectRef {
    #[serde(rename = "aspect_name")]
    pub aspect: Aspect,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub index: Option<usize>,
}

impl AspectRef {
    pub fn new(aspect: Aspect, index: Option<usize>) -> Result<Self, ProtocolError> {
        if !aspect.is_list() && index.is_some() {
            return Err(ProtocolError::MalformedDocument(format!(
                "string aspect `{aspect}` cannot carry an index"
            )));
        }
        Ok(Self { aspect, index })
    }

    pub fn list_item(aspect: Aspect, index: usize) -> Self {
        debug_assert!(aspect.is_list());
        Self {
            aspect,
            index: Some(index),
        }
    }

    pub fn whole(aspect: Aspect) -> Self {
        Self {
            aspect,
            index: None,
        }
    }

    /// Checks that an indexed reference points at an existing element.
    pub fn validate_against(&self, p: &TrialProtocol) -> Result<(), ProtocolError> {
        match (self.aspect.is_list(), self.index) {
            (false, Some(_)) => Err(ProtocolError::MalformedDocument(format!(
                "string aspect `{}` cannot carry an index",
                self.aspect
            ))),
            (true, Some(i)) => {
                let len = p.list(self.aspect).map_or(0, Vec::len);
                if i < len {
                    Ok(())
                } else {
                    Err(ProtocolError::MalformedDocument(format!(
                        "index {i} out of range for `{}` (len {len})",
                        self.aspect
                    )))
                }
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for AspectRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.index {
            Some(i) => write!(f, "{}[{}]", self.aspect, i),
            None => write!(f, "{}", self.aspect),
        }
    }
}

/// A structured trial protocol `T`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialProtocol {
    pub nct_id: String,
    pub phase: Phase,
    pub condition: String,
    pub intervention_name: String,
    pub failure_reason: FailureMode,
    pub adverse_events: String,
    pub inclusion_criteria: Vec<String>,
    pub exclusion_criteria: Vec<String>,
    pub dosage: String,
    pub target_primary_outcome: String,
    /// Unknown top-level keys, preserved verbatim.
    pub extras: BTreeMap<String, Value>,
}

impl TrialProtocol {
    pub fn list(&self, aspect: Aspect) -> Option<&Vec<String>> {
        match aspect {
            Aspect::InclusionCriteria => Some(&self.inclusion_criteria),
            Aspect::ExclusionCriteria => Some(&self.exclusion_criteria),
            _ => None,
        }
    }

    pub fn list_mut(&mut self, aspect: Aspect) -> Option<&mut Vec<String>> {
        match aspect {
            Aspect::InclusionCriteria => Some(&mut self.inclusion_criteria),
            Aspect::ExclusionCriteria => Some(&mut self.exclusion_criteria),
            _ => None,
        }
    }

    pub fn string(&self, aspect: Aspect) -> Option<&str> {
        match aspect {
            Aspect::Dosage => Some(&self.dosage),
            Aspect::TargetPrimaryOutcome => Some(&self.target_primary_outcome),
            _ => None,
        }
    }

    pub fn string_mut(&mut self, aspect: Aspect) -> Option<&mut String> {
        match aspect {
            Aspect::Dosage => Some(&mut self.dosage),
            Aspect::TargetPrimaryOutcome => Some(&mut self.target_primary_outcome),
            _ => None,
        }
    }

    /// All text held by an aspect: each criterion for LIST aspects, the
    /// single value for STRING aspects.
    pub fn aspect_texts(&self, aspect: Aspect) -> Vec<&str> {
        match self.list(aspect) {
            Some(items) => items.iter().map(String::as_str).collect(),
            None => vec![self.string(aspect).unwrap_or_default()],
        }
    }

    /// Text at an address, if it resolves to an existing element.
    pub fn resolve(&self, target: &AspectRef) -> Option<&str> {
        match (self.list(target.aspect), target.index) {
            (Some(items), Some(i)) => items.get(i).map(String::as_str),
            (None, None) => self.string(target.aspect),
            _ => None,
        }
    }

    pub fn to_value(&self) -> Value {
        let mut map = Map::new();
        for (k, v) in &self.extras {
            map.insert(k.clone(), v.clone());
        }
        let strings = |items: &[String]| Value::Array(items.iter().cloned().map(Value::String).collect());
        map.insert(KEY_NCT_ID.into(), Value::String(self.nct_id.clone()));
        map.insert(KEY_PHASE.into(), Value::String(self.phase.as_str().into()));
        map.insert(KEY_CONDITION.into(), Value::String(self.condition.clone()));
        map.insert(KEY_INTERVENTION.into(), Value::String(self.intervention_name.clone()));
        map.insert(
            KEY_FAILURE_REASON.into(),
            Value::String(self.failure_reason.as_str().into()),
        );
        map.insert(KEY_ADVERSE_EVENTS.into(), Value::String(self.adverse_events.clone()));
        map.insert(KEY_INCLUSION.into(), strings(&self.inclusion_criteria));
        map.insert(KEY_EXCLUSION.into(), strings(&self.exclusion_criteria));
        map.insert(KEY_DOSAGE.into(), Value::String(self.dosage.clone()));
        map.insert(
            KEY_PRIMARY_OUTCOME.into(),
            Value::String(self.target_primary_outcome.clone()),
        );
        Value::Object(map)
    }

    pub fn from_value(value: &Value) -> Result<Self, ProtocolError> {
        let obj = value.as_object().ok_or_else(|| {
            ProtocolError::MalformedDocument("top-level value must be an object".into())
        })?;
        for key in REQUIRED_KEYS {
            if !obj.contains_key(key) {
                return Err(ProtocolError::MissingField(key.into()));
            }
        }
        let text = |key: &str| -> Result<String, ProtocolError> {
            obj[key]
                .as_str()
                .map(str::to_owned)
                .ok_or_else(|| ProtocolError::MalformedDocument(format!("`{key}` must be a string")))
        };
        let criteria = |key: &str| -> Result<Vec<String>, ProtocolError> {
            let arr = obj[key]
                .as_array()
                .ok_or_else(|| ProtocolError::MalformedDocument(format!("`{key}` must be an array")))?;
            arr.iter()
                .enumerate()
                .map(|(i, v)| match v.as_str() {
                    Some(s) if !s.trim().is_empty() => Ok(s.to_owned()),
                    Some(_) => Err(ProtocolError::MalformedDocument(format!(
                        "`{key}`[{i}] is empty"
                    ))),
                    None => Err(ProtocolError::MalformedDocument(format!(
                        "`{key}`[{i}] must be a string"
                    ))),
                })
                .collect()
        };
        let extras = obj
            .iter()
            .filter(|(k, _)| !REQUIRED_KEYS.contains(&k.as_str()))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        Ok(Self {
            nct_id: text(KEY_NCT_ID)?,
            phase: text(KEY_PHASE)?.parse()?,
            condition: text(KEY_CONDITION)?,
            intervention_name: text(KEY_INTERVENTION)?,
            failure_reason: text(KEY_FAILURE_REASON)?.parse()?,
            adverse_events: text(KEY_ADVERSE_EVENTS)?,
            inclusion_criteria: criteria(KEY_INCLUSION)?,
            exclusion_criteria: criteria(KEY_EXCLUSION)?,
            dosage: text(KEY_DOSAGE)?,
            target_primary_outcome: text(KEY_PRIMARY_OUTCOME)?,
            extras,
        })
    }
}

impl Serialize for TrialProtocol {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        sorted(&self.to_value()).serialize(s)
    }
}

impl<'de> Deserialize<'de> for TrialProtocol {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let value = Value::deserialize(d)?;
        TrialProtocol::from_value(&value).map_err(serde::de::Error::custom)
    }
}

/// Parses one protocol document.
pub fn parse_protocol(text: &str) -> Result<TrialProtocol, ProtocolError> {
    let value: Value =
        serde_json::from_str(text).map_err(|e| ProtocolError::MalformedDocument(e.to_string()))?;
    TrialProtocol::from_value(&value)
}

/// Recursively rebuilds objects with keys inserted in sorted order.
pub(crate) fn sorted(value: &Value) -> Value {
    match value {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            let mut out = Map::new();
            for k in keys {
                out.insert(k.clone(), sorted(&map[k]));
            }
            Value::Object(out)
        }
        Value::Array(items) => Value::Array(items.iter().map(sorted).collect()),
        other => other.clone(),
    }
}

/// Canonical JSON for any value: sorted keys, two-space indent, trailing newline.
pub fn canonical_json(value: &Value) -> String {
    let mut out = serde_json::to_string_pretty(&sorted(value)).expect("json values always serialize");
    out.push('\n');
    out
}

/// Deterministic byte representation of a protocol.
pub fn canonicalize(p: &TrialProtocol) -> String {
    canonical_json(&p.to_value())
}

/// SHA-256 digest of canonical bytes.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CanonicalHash(pub [u8; 32]);

impl CanonicalHash {
    pub fn of_bytes(bytes: &[u8]) -> Self {
        let digest = Sha256::digest(bytes);
        let mut out = [0u8; 32];
        out.copy_from_slice(&digest);
        Self(out)
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Display for CanonicalHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for CanonicalHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CanonicalHash({})", &self.to_hex()[..12])
    }
}

impl Serialize for CanonicalHash {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for CanonicalHash {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        let bytes = hex::decode(&raw).map_err(serde::de::Error::custom)?;
        let arr: [u8; 32] = bytes
            .try_into()
            .map_err(|_| serde::de::Error::custom("digest must be 32 bytes"))?;
        Ok(Self(arr))
    }
}

pub fn hash_protocol(p: &TrialProtocol) -> CanonicalHash {
    CanonicalHash::of_bytes(canonicalize(p).as_bytes())
}

/// Hex SHA-256 of arbitrary text (prompt digests, ids).
pub fn sha256_hex(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}
