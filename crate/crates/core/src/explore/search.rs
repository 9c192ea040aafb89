use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use super::{attribute, estimate_space, ChoiceGroup, ExplorationResult, SearchStrategy, TraceRow};
use crate::modification::{apply, Augmentation, CandidateProtocol, ModificationSet};
use crate::oracle::{OutcomeOracle, ScoreCache};
use crate::protocol::{hash_protocol, CanonicalHash, TrialProtocol};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchConfig {
    /// Spaces strictly smaller than this are searched exhaustively.
    pub space_threshold: u64,
    pub beam_width: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            space_threshold: 1000,
            beam_width: 8,
        }
    }
}

/// Ranking order: higher score first, then lower canonical hash.
/// Unscored candidates sort last.
pub fn rank_key(a: &CandidateProtocol, b: &CandidateProtocol) -> Ordering {
    match (a.score, b.score) {
        (Some(x), Some(y)) => y.total_cmp(&x).then_with(|| a.hash.cmp(&b.hash)),
        (Some(_), None) => Ordering::Less,
        (None, Some(_)) => Ordering::Greater,
        (None, None) => a.hash.cmp(&b.hash),
    }
}

struct Scorer<'a> {
    base: &'a TrialProtocol,
    base_hash: CanonicalHash,
    oracle: &'a dyn OutcomeOracle,
    cache: &'a ScoreCache,
}

impl Scorer<'_> {
    /// Applies and scores each set. Sets that fail to apply or to score come
    /// back with `score: None`.
    fn score(&self, sets: Vec<ModificationSet>) -> Vec<CandidateProtocol> {
        let mut applicable = Vec::new();
        let mut cands: Vec<CandidateProtocol> = Vec::with_capacity(sets.len());
        for mods in sets {
            let (derived, hash) = match apply(self.base, &mods) {
                Ok(derived) => {
                    applicable.push(cands.len());
                    let h = hash_protocol(&derived);
                    (derived, h)
                }
                Err(e) => {
                    log::warn!("candidate {:?} does not apply: {e}", mods.ids());
                    (self.base.clone(), self.base_hash)
                }
            };
            cands.push(CandidateProtocol {
                base_hash: self.base_hash,
                mods,
                derived,
                hash,
                score: None,
            });
        }
        let batch: Vec<(CanonicalHash, &TrialProtocol)> =
            applicable.iter().map(|&i| (cands[i].hash, &cands[i].derived)).collect();
        let scores = self.cache.score_batch(self.oracle, &batch);
        for (&i, s) in applicable.iter().zip(scores) {
            match s {
                Ok(v) => cands[i].score = Some(v),
                Err(e) => log::warn!("candidate {:?} unscorable: {e}", cands[i].mods.ids()),
            }
        }
        cands
    }
}

fn options_of(g: &ChoiceGroup) -> impl Iterator<Item = Option<&Augmentation>> {
    std::iter::once(None).chain(g.options.iter().map(Some))
}

fn finish(
    base: &TrialProtocol,
    base_score: f64,
    groups: &[ChoiceGroup],
    strategy: SearchStrategy,
    explored: Vec<CandidateProtocol>,
    trace: Vec<TraceRow>,
) -> ExplorationResult {
    let unscorable = explored.iter().filter(|c| c.score.is_none()).count();
    let scored: Vec<CandidateProtocol> = explored.into_iter().filter(|c| c.score.is_some()).collect();
    let augmentations: BTreeMap<String, Augmentation> = groups
        .iter()
        .flat_map(|g| g.options.iter().map(|a| (a.id.clone(), a.clone())))
        .collect();
    let best = scored
        .iter()
        .min_by(|a, b| rank_key(a, b))
        .cloned()
        .unwrap_or_else(|| {
            let mut c = CandidateProtocol::build(base, ModificationSet::new()).expect("empty set applies");
            c.score = Some(base_score);
            c
        });
    let rewards = attribute(&scored, &augmentations);
    ExplorationResult {
        r_max: best.score.unwrap_or(base_score) - base_score,
        best,
        base_score,
        rewards,
        space_size: estimate_space(groups),
        strategy_used: strategy,
        unscorable,
        trace,
        augmentations,
        explored: scored,
    }
}

fn trace_row(c: &CandidateProtocol, depth: usize, explored: bool) -> TraceRow {
    TraceRow {
        mods: c.mods.ids(),
        hash: c.hash,
        score: c.score,
        depth,
        explored,
    }
}

/// Scores every combination of one option per group.
pub fn exhaustive(
    base: &TrialProtocol,
    base_score: f64,
    groups: &[ChoiceGroup],
    oracle: &dyn OutcomeOracle,
    cache: &ScoreCache,
) -> ExplorationResult {
    let mut sets = vec![ModificationSet::new()];
    for g in groups {
        let mut next = Vec::with_capacity(sets.len() * g.size() as usize);
        for s in &sets {
            for o in options_of(g) {
                next.push(match o {
                    None => s.clone(),
                    Some(a) => s.with(a.clone()),
                });
            }
        }
        sets = next;
    }
    let scorer = Scorer {
        base,
        base_hash: hash_protocol(base),
        oracle,
        cache,
    };
    let explored = scorer.score(sets);
    let trace = explored.iter().map(|c| trace_row(c, groups.len(), true)).collect();
    finish(base, base_score, groups, SearchStrategy::Exhaustive, explored, trace)
}

/// Group order for beam search: highest option confidence first, ties by slot.
fn beam_order(groups: &[ChoiceGroup]) -> Vec<&ChoiceGroup> {
    let mut order: Vec<&ChoiceGroup> = groups.iter().collect();
    order.sort_by(|a, b| {
        b.max_confidence()
            .total_cmp(&a.max_confidence())
            .then_with(|| a.slot.cmp(&b.slot))
    });
    order
}

/// Beam search of width `width` over the groups.
///
/// The explored set is every candidate scored at full depth plus every
/// candidate retained at an intermediate depth, de-duplicated by
/// modification set.
pub fn beam(
    base: &TrialProtocol,
    base_score: f64,
    groups: &[ChoiceGroup],
    oracle: &dyn OutcomeOracle,
    cache: &ScoreCache,
    width: usize,
) -> ExplorationResult {
    let width = width.max(1);
    let scorer = Scorer {
        base,
        base_hash: hash_protocol(base),
        oracle,
        cache,
    };
    let mut start = scorer.score(vec![ModificationSet::new()]);
    if start[0].score.is_none() {
        start[0].score = Some(base_score);
    }
    let mut beam_set = start;
    let mut trace: Vec<TraceRow> = Vec::new();
    let mut explored: Vec<CandidateProtocol> = Vec::new();
    let mut seen: BTreeSet<Vec<String>> = BTreeSet::new();
    let mut keep = |c: &CandidateProtocol, explored: &mut Vec<CandidateProtocol>| {
        if seen.insert(c.mods.ids()) {
            explored.push(c.clone());
        }
    };
    keep(&beam_set[0], &mut explored);
    trace.push(trace_row(&beam_set[0], 0, true));

    let order = beam_order(groups);
    let depth_total = order.len();
    for (d, g) in order.into_iter().enumerate() {
        let depth = d + 1;
        let mut sets = Vec::new();
        for member in &beam_set {
            for o in options_of(g) {
                sets.push(match o {
                    None => member.mods.clone(),
                    Some(a) => member.mods.with(a.clone()),
                });
            }
        }
        let mut scored = scorer.score(sets);
        scored.sort_by(rank_key);
        let full_depth = depth == depth_total;
        let retained: Vec<CandidateProtocol> = scored
            .iter()
            .filter(|c| c.score.is_some())
            .take(width)
            .cloned()
            .collect();
        for c in &scored {
            let counts = full_depth || retained.iter().any(|r| r.mods.ids() == c.mods.ids());
            trace.push(trace_row(c, depth, counts && c.score.is_some()));
            if full_depth && c.score.is_some() {
                keep(c, &mut explored);
            }
        }
        if !full_depth {
            for c in &retained {
                keep(c, &mut explored);
            }
        }
        if retained.is_empty() {
            break;
        }
        beam_set = retained;
    }
    finish(base, base_score, groups, SearchStrategy::Beam, explored, trace)
}

/// Exhaustive below the space threshold, beam search otherwise.
pub fn explore(
    base: &TrialProtocol,
    base_score: f64,
    groups: &[ChoiceGroup],
    oracle: &dyn OutcomeOracle,
    cache: &ScoreCache,
    cfg: &SearchConfig,
) -> ExplorationResult {
    if estimate_space(groups) < cfg.space_threshold {
        exhaustive(base, base_score, groups, oracle, cache)
    } else {
        beam(base, base_score, groups, oracle, cache, cfg.beam_width)
    }
}
