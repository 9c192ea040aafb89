//! Within-run and cross-run memory.
//!
//! Local memory lives for one optimisation run and records every
//! iteration's rewards, the distilled exemplars and the redesign pool.
//! Global memory persists per failure mode across runs.

mod confidence;
mod distill;
mod global;

pub use confidence::{adaptive_n, adjust_confidence, AdaptiveN, ConfidenceRules};
pub use distill::{distill, nearest_rank, reward_tier, Distilled};
pub use global::{
    load_memory, parse_guidance, transfer, GlobalMemory, MemoryError, ModeMemory, Signature, TransferSummary,
    SCHEMA_VERSION,
};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::explore::{RewardRecord, REWARD_EPS};
use crate::modification::{Augmentation, IndexMaps, SlotKey, ValidationTier};

/// Summary statistics behind a guidance entry.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Support {
    pub n: u64,
    pub mean_r: f64,
    pub success_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidanceEntry {
    /// Category token or aspect name.
    pub key: String,
    pub action: crate::modification::ActionType,
    pub recommendation: String,
    pub support: Support,
}

/// Ordered aspect-level recommendations. Empty on a cold start.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StrategicGuidance(pub Vec<GuidanceEntry>);

impl StrategicGuidance {
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = &GuidanceEntry> {
        self.0.iter()
    }

    pub fn get(&self, key: &str) -> Option<&GuidanceEntry> {
        self.0.iter().find(|e| e.key == key)
    }

    /// Replaces the entry with the same key, or appends. Keeps the list
    /// sorted by mean reward (descending) then key.
    pub fn upsert(&mut self, entry: GuidanceEntry) {
        self.0.retain(|e| e.key != entry.key);
        self.0.push(entry);
        self.0.sort_by(|a, b| {
            b.support
                .mean_r
                .total_cmp(&a.support.mean_r)
                .then_with(|| a.key.cmp(&b.key))
        });
    }
}

/// Tier-stratified values tried on one slot. Tiers are disjoint.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TierLists {
    pub excellent: Vec<String>,
    pub good: Vec<String>,
    pub moderate: Vec<String>,
    pub bad: Vec<String>,
    pub banned: Vec<String>,
}

impl TierLists {
    pub fn is_empty(&self) -> bool {
        self.excellent.is_empty()
            && self.good.is_empty()
            && self.moderate.is_empty()
            && self.bad.is_empty()
            && self.banned.is_empty()
    }

    fn list_mut(&mut self, tier: ValidationTier) -> Option<&mut Vec<String>> {
        match tier {
            ValidationTier::Excellent => Some(&mut self.excellent),
            ValidationTier::Good => Some(&mut self.good),
            ValidationTier::Moderate => Some(&mut self.moderate),
            ValidationTier::Bad => Some(&mut self.bad),
            ValidationTier::Banned => Some(&mut self.banned),
            ValidationTier::Pending => None,
        }
    }

    pub fn tier_of(&self, value: &str) -> Option<ValidationTier> {
        [
            (ValidationTier::Excellent, &self.excellent),
            (ValidationTier::Good, &self.good),
            (ValidationTier::Moderate, &self.moderate),
            (ValidationTier::Bad, &self.bad),
            (ValidationTier::Banned, &self.banned),
        ]
        .into_iter()
        .find(|(_, l)| l.iter().any(|v| v == value))
        .map(|(t, _)| t)
    }

    /// Places `value` in `tier`, removing it from any other tier.
    /// A banned value stays banned.
    pub fn place(&mut self, value: &str, tier: ValidationTier) {
        if tier == ValidationTier::Pending || self.banned.iter().any(|v| v == value) {
            return;
        }
        for l in [
            &mut self.excellent,
            &mut self.good,
            &mut self.moderate,
            &mut self.bad,
        ] {
            l.retain(|v| v != value);
        }
        if let Some(l) = self.list_mut(tier) {
            l.push(value.to_owned());
        }
    }
}

/// Per-slot exemplars accumulated over a run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TacticalExemplars(pub BTreeMap<SlotKey, TierLists>);

impl TacticalExemplars {
    pub fn get(&self, slot: &SlotKey) -> Option<&TierLists> {
        self.0.get(slot)
    }

    pub fn is_empty(&self) -> bool {
        self.0.values().all(TierLists::is_empty)
    }

    pub fn place(&mut self, slot: &SlotKey, value: &str, tier: ValidationTier) {
        self.0.entry(slot.clone()).or_default().place(value, tier);
    }

    pub fn merge(&mut self, other: &TacticalExemplars) {
        for (slot, tiers) in &other.0 {
            for (tier, list) in [
                (ValidationTier::Excellent, &tiers.excellent),
                (ValidationTier::Good, &tiers.good),
                (ValidationTier::Moderate, &tiers.moderate),
                (ValidationTier::Bad, &tiers.bad),
                (ValidationTier::Banned, &tiers.banned),
            ] {
                for v in list {
                    self.place(slot, v, tier);
                }
            }
        }
    }

    /// Moves index-addressed slots along with the protocol they describe.
    pub fn remap(&self, maps: &IndexMaps) -> Self {
        let mut out = BTreeMap::new();
        for (slot, tiers) in &self.0 {
            if let Some(s) = slot.remap(maps) {
                out.insert(s, tiers.clone());
            }
        }
        Self(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub augmentation: Augmentation,
    pub r: f64,
    pub iteration: usize,
    /// Quartile gate in force when the entry was admitted.
    pub threshold: f64,
}

/// High-reward augmentations kept for reuse in later searches.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RedesignPool {
    entries: BTreeMap<String, PoolEntry>,
}

impl RedesignPool {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &PoolEntry> {
        self.entries.values()
    }

    pub fn members(&self) -> impl Iterator<Item = &Augmentation> {
        self.entries.values().map(|e| &e.augmentation)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.entries.contains_key(id)
    }

    /// Admits `aug` if `r > 0` and `r >= threshold`. Returns whether it was
    /// newly added.
    pub fn insert(&mut self, aug: Augmentation, r: f64, iteration: usize, threshold: f64) -> bool {
        if !(r > REWARD_EPS && r >= threshold) || self.entries.contains_key(&aug.id) {
            return false;
        }
        self.entries.insert(
            aug.id.clone(),
            PoolEntry {
                augmentation: aug,
                r,
                iteration,
                threshold,
            },
        );
        true
    }

    pub fn remove(&mut self, id: &str) -> Option<PoolEntry> {
        self.entries.remove(id)
    }

    /// Rewrites member targets after the incumbent changed; members whose
    /// target was deleted are dropped.
    pub fn remap(&mut self, maps: &IndexMaps) {
        let old = std::mem::take(&mut self.entries);
        for (_, mut e) in old {
            match e.augmentation.remap(maps) {
                Some(a) => {
                    e.augmentation = a;
                    self.entries.insert(e.augmentation.id.clone(), e);
                }
                None => log::info!("pool member {} dropped: target deleted", e.augmentation.id),
            }
        }
    }
}

/// What is known about one slot from attributed rewards.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SlotOutcome {
    pub tried: Vec<String>,
    pub best_r: Option<f64>,
    pub worst_r: Option<f64>,
    pub n_attributed: usize,
}

impl SlotOutcome {
    /// Attributed at least once and never positive.
    pub fn failed(&self) -> bool {
        self.n_attributed > 0 && self.best_r.is_some_and(|r| r <= REWARD_EPS)
    }

    pub fn succeeded(&self) -> bool {
        self.best_r.is_some_and(|r| r > REWARD_EPS)
    }

    fn record(&mut self, value: &str, r: Option<f64>) {
        if !self.tried.iter().any(|v| v == value) {
            self.tried.push(value.to_owned());
        }
        if let Some(r) = r {
            self.n_attributed += 1;
            self.best_r = Some(self.best_r.map_or(r, |b| b.max(r)));
            self.worst_r = Some(self.worst_r.map_or(r, |w| w.min(r)));
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationEntry {
    pub iteration: usize,
    pub rewards: Vec<RewardRecord>,
    pub strategic: StrategicGuidance,
    pub tactical: TacticalExemplars,
    pub pool_snapshot: RedesignPool,
    /// Nearest-rank 75th percentile of this iteration's positive rewards.
    pub pool_threshold: Option<f64>,
    pub pool_added: Vec<String>,
}

/// Memory confined to a single optimisation run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LocalMemory {
    pub entries: Vec<IterationEntry>,
    pub seen_slots: BTreeMap<SlotKey, SlotOutcome>,
    pub tactical: TacticalExemplars,
    pub pool: RedesignPool,
    /// Every augmentation referenced by a reward record, by id.
    pub augmentations: BTreeMap<String, Augmentation>,
}

/// Text stored in exemplar lists for an augmentation.
pub fn exemplar_text(aug: &Augmentation) -> String {
    aug.value.clone().unwrap_or_else(|| format!("({})", aug.action))
}

impl LocalMemory {
    pub fn last_iteration(&self) -> usize {
        self.entries.last().map_or(0, |e| e.iteration)
    }

    /// Folds one iteration's distillate into memory and returns the ids
    /// newly admitted to the pool.
    ///
    /// # Panics
    ///
    /// If `iteration` does not exceed the last recorded iteration.
    pub fn record(
        &mut self,
        iteration: usize,
        rewards: Vec<RewardRecord>,
        augmentations: &BTreeMap<String, Augmentation>,
        d: Distilled,
        pool_enabled: bool,
    ) -> Vec<String> {
        assert!(iteration > self.last_iteration(), "iterations must strictly increase");
        for rec in &rewards {
            if let Some(aug) = augmentations.get(&rec.augmentation_id) {
                self.seen_slots
                    .entry(aug.slot.clone())
                    .or_default()
                    .record(&exemplar_text(aug), rec.r);
                self.augmentations.insert(aug.id.clone(), aug.clone());
            }
        }
        self.tactical.merge(&d.tactical);
        let mut added = Vec::new();
        if pool_enabled {
            if let Some(threshold) = d.threshold {
                for (aug, r) in d.pool_delta {
                    let id = aug.id.clone();
                    if self.pool.insert(aug, r, iteration, threshold) {
                        added.push(id);
                    }
                }
            }
        }
        self.entries.push(IterationEntry {
            iteration,
            rewards,
            strategic: d.strategic,
            tactical: d.tactical,
            pool_snapshot: self.pool.clone(),
            pool_threshold: d.threshold,
            pool_added: added.clone(),
        });
        added
    }

    /// Every reward record from every iteration, in iteration order.
    pub fn all_rewards(&self) -> impl Iterator<Item = &RewardRecord> {
        self.entries.iter().flat_map(|e| e.rewards.iter())
    }

    /// Re-keys slot-level state after the incumbent changed.
    pub fn remap(&mut self, maps: &IndexMaps) {
        let old = std::mem::take(&mut self.seen_slots);
        for (slot, outcome) in old {
            if let Some(s) = slot.remap(maps) {
                self.seen_slots.insert(s, outcome);
            }
        }
        self.tactical = self.tactical.remap(maps);
        self.pool.remap(maps);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modification::ActionType;
    use crate::protocol::{Aspect, AspectRef};

    fn aug(i: usize, v: &str) -> Augmentation {
        Augmentation::new(AspectRef::list_item(Aspect::InclusionCriteria, i), ActionType::Modify, Some(v.into()), "", 0.5, "")
            .unwrap()
    }

    #[test]
    fn tiers_stay_disjoint_and_banned_is_sticky() {
        let mut t = TierLists::default();
        t.place("a", ValidationTier::Good);
        t.place("a", ValidationTier::Excellent);
        assert_eq!(t.tier_of("a"), Some(ValidationTier::Excellent));
        assert!(t.good.is_empty());
        t.place("b", ValidationTier::Banned);
        t.place("b", ValidationTier::Excellent);
        assert_eq!(t.tier_of("b"), Some(ValidationTier::Banned));
        assert!(t.excellent.iter().all(|v| v != "b"));
    }

    #[test]
    fn pool_gate() {
        let mut p = RedesignPool::default();
        assert!(!p.insert(aug(0, "x"), 0.0, 1, 0.0));
        assert!(!p.insert(aug(0, "x"), 0.02, 1, 0.03));
        assert!(p.insert(aug(0, "x"), 0.03, 1, 0.03));
        assert!(!p.insert(aug(0, "x"), 0.05, 2, 0.03));
        assert_eq!(p.len(), 1);
    }

    #[test]
    fn slot_outcomes() {
        let mut o = SlotOutcome::default();
        o.record("a", None);
        assert!(!o.failed() && !o.succeeded());
        o.record("b", Some(-0.01));
        assert!(o.failed());
        o.record("c", Some(0.02));
        assert!(o.succeeded() && !o.failed());
        assert_eq!(o.tried.len(), 3);
    }

    #[test]
    fn guidance_upsert_replaces() {
        let mut g = StrategicGuidance::default();
        let e = |k: &str, m: f64| GuidanceEntry {
            key: k.into(),
            action: ActionType::Delete,
            recommendation: String::new(),
            support: Support { n: 1, mean_r: m, success_rate: 1.0 },
        };
        g.upsert(e("a", 0.1));
        g.upsert(e("b", 0.2));
        g.upsert(e("a", 0.3));
        let keys: Vec<_> = g.iter().map(|e| e.key.as_str()).collect();
        assert_eq!(keys, ["a", "b"]);
        assert_eq!(g.len(), 2);
    }
}
