//! Candidate-space construction, exhaustive and beam search, and marginal
//! reward attribution.

mod attribution;
mod search;

pub use attribution::{attribute, REWARD_EPS};
pub use search::{beam, exhaustive, explore, rank_key, SearchConfig};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::memory::RedesignPool;
use crate::modification::{ActionType, Augmentation, CandidateProtocol, SlotKey, ValidationTier};
use crate::protocol::{CanonicalHash, TrialProtocol};

token_enum! {
    SearchStrategy {
        Exhaustive => "exhaustive",
        Beam => "beam",
    }
}

/// The options for one slot. The no-op option is implicit.
#[derive(Debug, Clone, PartialEq)]
pub struct ChoiceGroup {
    pub slot: SlotKey,
    pub options: Vec<Augmentation>,
}

impl ChoiceGroup {
    /// Option count including the no-op.
    pub fn size(&self) -> u64 {
        self.options.len() as u64 + 1
    }

    pub fn max_confidence(&self) -> f64 {
        self.options.iter().map(|a| a.confidence).fold(0.0, f64::max)
    }
}

/// Marginal contribution of one augmentation over the explored set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardRecord {
    pub augmentation_id: String,
    /// `None` when the augmentation was in every or no scored candidate.
    pub r: Option<f64>,
    pub n_with: usize,
    pub n_without: usize,
    pub v: ValidationTier,
}

impl RewardRecord {
    pub fn is_attributable(&self) -> bool {
        self.r.is_some()
    }
}

/// One row of the exploration trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub mods: Vec<String>,
    pub hash: CanonicalHash,
    pub score: Option<f64>,
    pub depth: usize,
    /// Whether the row counts towards attribution and the best candidate.
    pub explored: bool,
}

#[derive(Debug, Clone)]
pub struct ExplorationResult {
    pub explored: Vec<CandidateProtocol>,
    pub best: CandidateProtocol,
    /// Score of the unmodified protocol this search started from.
    pub base_score: f64,
    /// `best.score - base_score`.
    pub r_max: f64,
    pub rewards: Vec<RewardRecord>,
    pub space_size: u64,
    pub strategy_used: SearchStrategy,
    pub unscorable: usize,
    pub trace: Vec<TraceRow>,
    /// Every option that appeared in a group, by id.
    pub augmentations: BTreeMap<String, Augmentation>,
}

/// Groups passing augmentations and usable pool members by slot.
///
/// Options are de-duplicated by action and value; pool members whose
/// target no longer exists or which would not change `current` are dropped.
pub fn build_groups(passing: &[Augmentation], pool: Option<&RedesignPool>, current: &TrialProtocol) -> Vec<ChoiceGroup> {
    let mut by_slot: BTreeMap<SlotKey, Vec<Augmentation>> = BTreeMap::new();
    let pooled = pool.into_iter().flat_map(|p| p.members());
    for aug in passing.iter().chain(pooled) {
        if !aug.validation.passes() {
            continue;
        }
        if aug.target.validate_against(current).is_err() {
            log::info!("dropping {} ({}): target no longer exists", aug.id, aug.target);
            continue;
        }
        if aug.is_noop_on(current) {
            continue;
        }
        let options = by_slot.entry(aug.slot.clone()).or_default();
        let dup = options
            .iter()
            .any(|o| o.action == aug.action && o.value == aug.value);
        if !dup {
            options.push(aug.clone());
        }
    }
    by_slot
        .into_iter()
        .map(|(slot, mut options)| {
            options.sort_by(|a, b| a.id.cmp(&b.id));
            ChoiceGroup { slot, options }
        })
        .collect()
}

/// Product of group sizes, saturating at `u64::MAX`.
pub fn estimate_space(groups: &[ChoiceGroup]) -> u64 {
    groups.iter().fold(1u64, |acc, g| acc.saturating_mul(g.size()))
}

/// Counts of delete/modify/add options, for logs.
pub fn action_counts(groups: &[ChoiceGroup]) -> BTreeMap<ActionType, usize> {
    let mut out = BTreeMap::new();
    for a in groups.iter().flat_map(|g| &g.options) {
        *out.entry(a.action).or_default() += 1;
    }
    out
}
