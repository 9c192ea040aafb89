//! Modification algebra: augmentations, slot-disjoint modification sets and
//! the apply operator `T' = T ⊕ S`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::protocol::{hash_protocol, sha256_hex, Aspect, AspectRef, CanonicalHash, ProtocolError, TrialProtocol};

token_enum! {
    ActionType {
        Delete => "DELETE",
        Modify => "MODIFY",
        Add => "ADD",
    }
}

token_enum! {
    /// Judge verdict, ordered from best to worst after `Pending`.
    ValidationTier {
        Pending => "PENDING",
        Excellent => "EXCELLENT",
        Good => "GOOD",
        Moderate => "MODERATE",
        Bad => "BAD",
        Banned => "BANNED",
    }
}

impl ValidationTier {
    /// Tiers allowed into candidate construction.
    pub fn passes(self) -> bool {
        matches!(self, ValidationTier::Excellent | ValidationTier::Good | ValidationTier::Moderate)
    }
}

token_enum! {
    /// Eligibility-criterion taxonomy. Declaration order is the tie-break order.
    Category {
        ParticipationBarrier => "PARTICIPATION_BARRIER",
        SafetyExclusion => "SAFETY_EXCLUSION",
        SelectionCriterion => "SELECTION_CRITERION",
        EnrichmentCriterion => "ENRICHMENT_CRITERION",
    }
}

/// Where inside an aspect a modification lands.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Position {
    Index(usize),
    Whole,
    /// A new list entry; the tag separates independent ADD targets.
    Append(String),
}

/// One addressable slot. Candidates hold at most one modification per slot.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SlotKey {
    pub aspect: Aspect,
    pub position: Position,
}

impl SlotKey {
    pub fn for_target(target: &AspectRef, action: ActionType, add_tag: &str) -> Self {
        let position = match (action, target.index) {
            (ActionType::Add, _) => Position::Append(add_tag.to_owned()),
            (_, Some(i)) => Position::Index(i),
            (_, None) => Position::Whole,
        };
        Self {
            aspect: target.aspect,
            position,
        }
    }

    /// Tag for an ADD slot derived from the proposing strategy.
    pub fn add_tag(aspect: Aspect, strategy: &str) -> String {
        sha256_hex(&format!("{aspect}\u{1f}{}", strategy.trim()))[..10].to_owned()
    }

    /// The slot's position in the protocol produced alongside `maps`, or
    /// `None` if its entry was deleted.
    pub fn remap(&self, maps: &IndexMaps) -> Option<Self> {
        match self.position {
            Position::Index(i) => {
                let j = maps.get(&self.aspect)?.get(i).copied().flatten()?;
                Some(Self {
                    aspect: self.aspect,
                    position: Position::Index(j),
                })
            }
            _ => Some(self.clone()),
        }
    }
}

impl fmt::Display for SlotKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.position {
            Position::Index(i) => write!(f, "{}#{}", self.aspect, i),
            Position::Whole => write!(f, "{}#whole", self.aspect),
            Position::Append(tag) => write!(f, "{}#add:{}", self.aspect, tag),
        }
    }
}

impl FromStr for SlotKey {
    type Err = ProtocolError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ProtocolError::MalformedDocument(format!("bad slot key {s:?}"));
        let (aspect, pos) = s.rsplit_once('#').ok_or_else(bad)?;
        let aspect: Aspect = aspect.parse()?;
        let position = if pos == "whole" {
            Position::Whole
        } else if let Some(tag) = pos.strip_prefix("add:") {
            Position::Append(tag.to_owned())
        } else {
            Position::Index(pos.parse().map_err(|_| bad())?)
        };
        Ok(Self { aspect, position })
    }
}

impl Serialize for SlotKey {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SlotKey {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ApplyError {
    #[error("slot {slot} targeted by several modifications: {ids:?}")]
    ConflictingSlot { slot: String, ids: Vec<String> },
    #[error("modification {id} targets {target} but the list has {len} entries")]
    IndexOutOfRange { id: String, target: String, len: usize },
    #[error("banned modification {0} cannot be applied")]
    BannedMember(String),
    #[error("invalid augmentation: {0}")]
    Invalid(String),
}

/// One candidate modification of one slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Augmentation {
    pub id: String,
    #[serde(flatten)]
    pub target: AspectRef,
    pub action: ActionType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<String>,
    #[serde(default)]
    pub strategy: String,
    pub confidence: f64,
    pub validation: ValidationTier,
    pub slot: SlotKey,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<Category>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub original_value: Option<String>,
}

impl Augmentation {
    /// Builds a pending augmentation, enforcing the action/target shape rules.
    pub fn new(
        target: AspectRef,
        action: ActionType,
        value: Option<String>,
        strategy: impl Into<String>,
        confidence: f64,
        add_tag: &str,
    ) -> Result<Self, ApplyError> {
        match action {
            ActionType::Delete => {
                if target.index.is_none() || !target.aspect.is_list() {
                    return Err(ApplyError::Invalid("DELETE needs an indexed list target".into()));
                }
                if value.is_some() {
                    return Err(ApplyError::Invalid("DELETE carries no value".into()));
                }
            }
            ActionType::Modify => {
                if value.is_none() {
                    return Err(ApplyError::Invalid("MODIFY needs a value".into()));
                }
                if target.aspect.is_list() && target.index.is_none() {
                    return Err(ApplyError::Invalid("MODIFY on a list needs an index".into()));
                }
            }
            ActionType::Add => {
                if value.is_none() || target.index.is_some() || !target.aspect.is_list() {
                    return Err(ApplyError::Invalid(
                        "ADD needs a value and an unindexed list target".into(),
                    ));
                }
            }
        }
        if let Some(v) = &value {
            if v.trim().is_empty() {
                return Err(ApplyError::Invalid("empty replacement value".into()));
            }
        }
        let slot = SlotKey::for_target(&target, action, add_tag);
        let mut aug = Self {
            id: String::new(),
            target,
            action,
            value,
            strategy: strategy.into(),
            confidence: confidence.clamp(0.0, 1.0),
            validation: ValidationTier::Pending,
            slot,
            category: None,
            original_value: None,
        };
        aug.refresh_id();
        Ok(aug)
    }

    pub fn compute_id(slot: &SlotKey, action: ActionType, value: Option<&str>) -> String {
        let text = format!("{slot}\u{1f}{action}\u{1f}{}", value.unwrap_or(""));
        sha256_hex(&text)[..16].to_owned()
    }

    pub fn refresh_id(&mut self) {
        self.id = Self::compute_id(&self.slot, self.action, self.value.as_deref());
    }

    /// Key used for memory signatures: the category when known, else the aspect.
    pub fn pattern_key(&self) -> String {
        match self.category {
            Some(c) => c.as_str().to_owned(),
            None => self.target.aspect.as_str().to_owned(),
        }
    }

    /// True when applying this augmentation would leave `p` unchanged.
    pub fn is_noop_on(&self, p: &TrialProtocol) -> bool {
        match self.action {
            ActionType::Delete => false,
            ActionType::Modify => p.resolve(&self.target) == self.value.as_deref(),
            ActionType::Add => p
                .list(self.target.aspect)
                .is_some_and(|items| items.iter().any(|c| Some(c.as_str()) == self.value.as_deref())),
        }
    }

    /// Re-addresses this augmentation after its base protocol changed.
    /// Returns `None` when the addressed criterion no longer exists.
    pub fn remap(&self, maps: &IndexMaps) -> Option<Self> {
        let mut out = self.clone();
        if let Some(i) = self.target.index {
            let j = maps.get(&self.target.aspect)?.get(i).copied().flatten()?;
            out.target.index = Some(j);
            out.slot.position = Position::Index(j);
            out.refresh_id();
        }
        Some(out)
    }
}

/// Per-list map from base index to output index (`None` if deleted).
pub type IndexMaps = BTreeMap<Aspect, Vec<Option<usize>>>;

/// A set of augmentations keyed by id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModificationSet {
    members: BTreeMap<String, Augmentation>,
}

impl ModificationSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_members(members: impl IntoIterator<Item = Augmentation>) -> Self {
        let mut set = Self::new();
        for m in members {
            set.insert(m);
        }
        set
    }

    pub fn insert(&mut self, aug: Augmentation) {
        self.members.insert(aug.id.clone(), aug);
    }

    pub fn with(&self, aug: Augmentation) -> Self {
        let mut next = self.clone();
        next.insert(aug);
        next
    }

    pub fn contains(&self, id: &str) -> bool {
        self.members.contains_key(id)
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Members in id order.
    pub fn iter(&self) -> impl Iterator<Item = &Augmentation> {
        self.members.values()
    }

    pub fn ids(&self) -> Vec<String> {
        self.members.keys().cloned().collect()
    }
}

/// A problem that would make [`apply`] fail.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind")]
pub enum Conflict {
    ConflictingSlot { slot: String, ids: Vec<String> },
    IndexOutOfRange { id: String, target: String, len: usize },
    BannedMember { id: String },
    Invalid { id: String, reason: String },
}

impl From<Conflict> for ApplyError {
    fn from(c: Conflict) -> Self {
        match c {
            Conflict::ConflictingSlot { slot, ids } => ApplyError::ConflictingSlot { slot, ids },
            Conflict::IndexOutOfRange { id, target, len } => {
                ApplyError::IndexOutOfRange { id, target, len }
            }
            Conflict::BannedMember { id } => ApplyError::BannedMember(id),
            Conflict::Invalid { id, reason } => ApplyError::Invalid(format!("{id}: {reason}")),
        }
    }
}

/// Lists every reason `mods` cannot be applied to `base`; empty iff apply succeeds.
pub fn check_conflicts(mods: &ModificationSet, base: &TrialProtocol) -> Vec<Conflict> {
    let mut out = Vec::new();
    let mut by_slot: BTreeMap<&SlotKey, Vec<String>> = BTreeMap::new();
    for m in mods.iter() {
        by_slot.entry(&m.slot).or_default().push(m.id.clone());
        if m.validation == ValidationTier::Banned {
            out.push(Conflict::BannedMember { id: m.id.clone() });
        }
        if m.action != ActionType::Delete && m.value.is_none() {
            out.push(Conflict::Invalid {
                id: m.id.clone(),
                reason: format!("{} without a value", m.action),
            });
        }
        if let Some(i) = m.target.index {
            let len = base.list(m.target.aspect).map_or(0, Vec::len);
            if i >= len {
                out.push(Conflict::IndexOutOfRange {
                    id: m.id.clone(),
                    target: m.target.to_string(),
                    len,
                });
            }
        }
    }
    for (slot, ids) in by_slot {
        if ids.len() > 1 {
            out.push(Conflict::ConflictingSlot {
                slot: slot.to_string(),
                ids,
            });
        }
    }
    out
}

/// Applies `mods` to `base`, also returning where each base criterion ended up.
pub fn apply_with_map(
    base: &TrialProtocol,
    mods: &ModificationSet,
) -> Result<(TrialProtocol, IndexMaps), ApplyError> {
    if let Some(c) = check_conflicts(mods, base).into_iter().next() {
        return Err(c.into());
    }
    let mut out = base.clone();
    let mut maps = IndexMaps::new();
    for aspect in [Aspect::InclusionCriteria, Aspect::ExclusionCriteria] {
        let items = base.list(aspect).expect("list aspect");
        let mut replaced: Vec<Option<String>> = items.iter().cloned().map(Some).collect();
        let mut appended = Vec::new();
        for m in mods.iter().filter(|m| m.target.aspect == aspect) {
            match (m.action, m.target.index) {
                (ActionType::Delete, Some(i)) => replaced[i] = None,
                (ActionType::Modify, Some(i)) => replaced[i] = m.value.clone(),
                (ActionType::Add, None) => appended.push(m.value.clone().expect("checked")),
                _ => return Err(ApplyError::Invalid(format!("{}: bad shape", m.id))),
            }
        }
        let mut map = Vec::with_capacity(items.len());
        let mut list = Vec::with_capacity(items.len() + appended.len());
        for entry in replaced {
            match entry {
                Some(text) => {
                    map.push(Some(list.len()));
                    list.push(text);
                }
                None => map.push(None),
            }
        }
        list.extend(appended);
        *out.list_mut(aspect).expect("list aspect") = list;
        maps.insert(aspect, map);
    }
    for m in mods.iter().filter(|m| !m.target.aspect.is_list()) {
        match m.action {
            ActionType::Modify => {
                *out.string_mut(m.target.aspect).expect("string aspect") =
                    m.value.clone().expect("checked");
            }
            _ => return Err(ApplyError::Invalid(format!("{}: bad shape", m.id))),
        }
    }
    Ok((out, maps))
}

pub fn apply(base: &TrialProtocol, mods: &ModificationSet) -> Result<TrialProtocol, ApplyError> {
    apply_with_map(base, mods).map(|(p, _)| p)
}

/// A modification set, the protocol it derives and its oracle score.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CandidateProtocol {
    pub base_hash: CanonicalHash,
    pub mods: ModificationSet,
    #[serde(skip)]
    pub derived: TrialProtocol,
    pub hash: CanonicalHash,
    pub score: Option<f64>,
}

impl CandidateProtocol {
    pub fn build(base: &TrialProtocol, mods: ModificationSet) -> Result<Self, ApplyError> {
        let derived = apply(base, &mods)?;
        Ok(Self {
            base_hash: hash_protocol(base),
            hash: hash_protocol(&derived),
            mods,
            derived,
            score: None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::parse_protocol;

    fn base() -> TrialProtocol {
        parse_protocol(
            r#"{"nct_id":"NCT1","phase":"Phase 2","condition":"c","intervention/intervention_name":"i",
            "failure_reason":"safety","adverse_events":"Not specified",
            "eligibility/inclusion_criteria":["a","b","c"],"eligibility/exclusion_criteria":["x","y"],
            "dosage":"100mg oral daily for 28 days","target_primary_outcome":"o"}"#,
        )
        .unwrap()
    }

    fn modify(aspect: Aspect, i: usize, v: &str) -> Augmentation {
        Augmentation::new(AspectRef::list_item(aspect, i), ActionType::Modify, Some(v.into()), "", 0.5, "")
            .unwrap()
    }

    #[test]
    fn empty_set_is_identity() {
        assert_eq!(apply(&base(), &ModificationSet::new()).unwrap(), base());
    }

    #[test]
    fn dosage_modify_replaces_string() {
        let m = Augmentation::new(
            AspectRef::whole(Aspect::Dosage),
            ActionType::Modify,
            Some("50mg oral daily for 28 days".into()),
            "reduce",
            0.8,
            "",
        )
        .unwrap();
        let out = apply(&base(), &ModificationSet::from_members([m])).unwrap();
        assert_eq!(out.dosage, "50mg oral daily for 28 days");
        let mut expect = base();
        expect.dosage = out.dosage.clone();
        assert_eq!(out, expect);
    }

    #[test]
    fn deletes_use_base_indices() {
        let d0 = Augmentation::new(AspectRef::list_item(Aspect::InclusionCriteria, 0), ActionType::Delete, None, "", 0.5, "").unwrap();
        let m2 = modify(Aspect::InclusionCriteria, 2, "c2");
        let (out, maps) = apply_with_map(&base(), &ModificationSet::from_members([d0, m2])).unwrap();
        assert_eq!(out.inclusion_criteria, vec!["b", "c2"]);
        assert_eq!(maps[&Aspect::InclusionCriteria], vec![None, Some(0), Some(1)]);
    }

    #[test]
    fn conflicts_are_reported() {
        let a = modify(Aspect::InclusionCriteria, 1, "p");
        let b = modify(Aspect::InclusionCriteria, 1, "q");
        let c = check_conflicts(&ModificationSet::from_members([a, b]), &base());
        assert_eq!(c.len(), 1);
        assert!(matches!(c[0], Conflict::ConflictingSlot { ref ids, .. } if ids.len() == 2));

        let d = Augmentation::new(AspectRef::list_item(Aspect::ExclusionCriteria, 3), ActionType::Delete, None, "", 0.5, "").unwrap();
        let c = check_conflicts(&ModificationSet::from_members([d]), &base());
        assert!(matches!(c.as_slice(), [Conflict::IndexOutOfRange { len: 2, .. }]));
    }

    #[test]
    fn banned_member_rejected() {
        let mut a = modify(Aspect::ExclusionCriteria, 0, "z");
        a.validation = ValidationTier::Banned;
        assert!(matches!(
            apply(&base(), &ModificationSet::from_members([a])),
            Err(ApplyError::BannedMember(_))
        ));
    }

    #[test]
    fn shape_rules_enforced() {
        assert!(Augmentation::new(AspectRef::whole(Aspect::Dosage), ActionType::Delete, None, "", 0.5, "").is_err());
        assert!(Augmentation::new(AspectRef::whole(Aspect::InclusionCriteria), ActionType::Add, None, "", 0.5, "").is_err());
        assert!(Augmentation::new(AspectRef::list_item(Aspect::InclusionCriteria, 0), ActionType::Add, Some("v".into()), "", 0.5, "").is_err());
    }

    #[test]
    fn slot_key_round_trips() {
        for s in ["dosage#whole", "eligibility/inclusion_criteria#4", "eligibility/exclusion_criteria#add:ab12"] {
            assert_eq!(s.parse::<SlotKey>().unwrap().to_string(), s);
        }
    }

    #[test]
    fn remap_follows_deletions() {
        let d0 = Augmentation::new(AspectRef::list_item(Aspect::InclusionCriteria, 0), ActionType::Delete, None, "", 0.5, "").unwrap();
        let (_, maps) = apply_with_map(&base(), &ModificationSet::from_members([d0])).unwrap();
        let m = modify(Aspect::InclusionCriteria, 2, "c2");
        let moved = m.remap(&maps).unwrap();
        assert_eq!(moved.target.index, Some(1));
        assert_ne!(moved.id, m.id);
        assert!(modify(Aspect::InclusionCriteria, 0, "zz").remap(&maps).is_none());
    }
}
