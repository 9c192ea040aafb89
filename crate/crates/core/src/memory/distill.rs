use std::collections::BTreeMap;

use super::{exemplar_text, GuidanceEntry, StrategicGuidance, Support, TacticalExemplars};
use crate::explore::{RewardRecord, REWARD_EPS};
use crate::modification::{ActionType, Augmentation, ValidationTier};

/// Nearest-rank percentile: the smallest value with at least `q` of the
/// sample at or below it. `None` for an empty sample.
pub fn nearest_rank(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len());
    Some(v[rank - 1])
}

/// Tier implied by a reward alone.
pub fn reward_tier(r: Option<f64>, top: Option<f64>) -> ValidationTier {
    match r {
        Some(r) if r > REWARD_EPS => {
            if top.is_some_and(|t| r >= t) {
                ValidationTier::Excellent
            } else {
                ValidationTier::Good
            }
        }
        Some(r) if r < -REWARD_EPS => ValidationTier::Bad,
        _ => ValidationTier::Moderate,
    }
}

/// Output of one distillation step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Distilled {
    pub pool_delta: Vec<(Augmentation, f64)>,
    /// Pool gate: nearest-rank 75th percentile of the positive rewards.
    pub threshold: Option<f64>,
    pub strategic: StrategicGuidance,
    pub tactical: TacticalExemplars,
}

#[derive(Default)]
struct Agg {
    rs: Vec<f64>,
    by_action: BTreeMap<ActionType, Vec<f64>>,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub(crate) fn render_recommendation(key: &str, action: ActionType, mean_r: f64) -> String {
    let subject = key.to_ascii_lowercase().replace('_', " ");
    if mean_r > REWARD_EPS {
        format!("{action} edits on {subject} elements tended to raise the predicted success probability.")
    } else {
        format!("Edits on {subject} elements did not help; look elsewhere first.")
    }
}

/// Distils one iteration's rewards.
///
/// `excluded` are augmentations the judge rejected; BANNED ones enter the
/// exemplars as banned and BAD ones as bad.
pub fn distill(
    rewards: &[RewardRecord],
    augmentations: &BTreeMap<String, Augmentation>,
    excluded: &[Augmentation],
) -> Distilled {
    let positives: Vec<f64> = rewards
        .iter()
        .filter_map(|r| r.r)
        .filter(|&r| r > REWARD_EPS)
        .collect();
    let threshold = nearest_rank(&positives, 0.75);

    let mut out = Distilled {
        threshold,
        ..Default::default()
    };
    let mut aggs: BTreeMap<String, Agg> = BTreeMap::new();
    for rec in rewards {
        let Some(aug) = augmentations.get(&rec.augmentation_id) else {
            log::warn!("reward for unknown augmentation {}", rec.augmentation_id);
            continue;
        };
        out.tactical
            .place(&aug.slot, &exemplar_text(aug), reward_tier(rec.r, threshold));
        if let (Some(r), Some(t)) = (rec.r, threshold) {
            if r > REWARD_EPS && r >= t {
                out.pool_delta.push((aug.clone(), r));
            }
        }
        if let Some(r) = rec.r {
            let a = aggs.entry(aug.pattern_key()).or_default();
            a.rs.push(r);
            a.by_action.entry(aug.action).or_default().push(r);
        }
    }
    for aug in excluded {
        match aug.validation {
            ValidationTier::Banned | ValidationTier::Bad => {
                out.tactical.place(&aug.slot, &exemplar_text(aug), aug.validation)
            }
            _ => {}
        }
    }
    for (key, a) in aggs {
        let mean_r = mean(&a.rs);
        let (action, _) = a
            .by_action
            .iter()
            .map(|(act, rs)| (*act, mean(rs)))
            .fold(None::<(ActionType, f64)>, |best, (act, m)| match best {
                Some((_, bm)) if bm >= m => best,
                _ => Some((act, m)),
            })
            .expect("non-empty aggregate");
        let n_pos = a.rs.iter().filter(|&&r| r > REWARD_EPS).count();
        out.strategic.upsert(GuidanceEntry {
            recommendation: render_recommendation(&key, action, mean_r),
            key,
            action,
            support: Support {
                n: a.rs.len() as u64,
                mean_r,
                success_rate: n_pos as f64 / a.rs.len() as f64,
            },
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{Aspect, AspectRef};

    fn setup(rs: &[Option<f64>]) -> (Vec<RewardRecord>, BTreeMap<String, Augmentation>) {
        let mut augs = BTreeMap::new();
        let mut recs = Vec::new();
        for (i, r) in rs.iter().enumerate() {
            let mut a = Augmentation::new(
                AspectRef::list_item(Aspect::InclusionCriteria, i),
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
                r: *r,
                n_with: 1,
                n_without: 1,
                v: a.validation,
            });
            augs.insert(a.id.clone(), a);
        }
        (recs, augs)
    }

    #[test]
    fn nearest_rank_examples() {
        assert_eq!(nearest_rank(&[0.04, 0.01, 0.03, 0.02], 0.75), Some(0.03));
        assert_eq!(nearest_rank(&[0.05], 0.75), Some(0.05));
        assert_eq!(nearest_rank(&[], 0.75), None);
    }

    #[test]
    fn pool_delta_is_top_quartile() {
        let (recs, augs) = setup(&[Some(0.01), Some(0.02), Some(0.03), Some(0.04), Some(-0.1), None]);
        let d = distill(&recs, &augs, &[]);
        let rs: Vec<f64> = d.pool_delta.iter().map(|(_, r)| *r).collect();
        assert_eq!(rs, vec![0.03, 0.04]);
        assert_eq!(d.threshold, Some(0.03));
    }

    #[test]
    fn no_positive_rewards_means_empty_pool() {
        let (recs, augs) = setup(&[Some(0.0), Some(-0.02)]);
        let d = distill(&recs, &augs, &[]);
        assert!(d.pool_delta.is_empty());
        assert_eq!(d.threshold, None);
    }

    #[test]
    fn tiers_follow_rewards() {
        let (recs, augs) = setup(&[Some(0.04), Some(0.01), Some(0.0), Some(-0.01), None]);
        let d = distill(&recs, &augs, &[]);
        let tiers: Vec<ValidationTier> = augs
            .values()
            .map(|a| d.tactical.get(&a.slot).unwrap().tier_of(a.value.as_deref().unwrap()).unwrap())
            .collect();
        let mut want = vec![];
        for a in augs.values() {
            let r = recs.iter().find(|x| x.augmentation_id == a.id).unwrap().r;
            want.push(reward_tier(r, Some(0.04)));
        }
        assert_eq!(tiers, want);
        assert!(tiers.contains(&ValidationTier::Excellent));
        assert!(tiers.contains(&ValidationTier::Bad));
    }
}
