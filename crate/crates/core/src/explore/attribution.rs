use std::collections::BTreeMap;

use super::RewardRecord;
use crate::modification::{Augmentation, CandidateProtocol};

/// Rewards with magnitude at or below this count as zero.
pub const REWARD_EPS: f64 = 1e-12;

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Marginal reward of each augmentation: the mean score of scored
/// candidates containing it minus the mean score of those that do not.
///
/// Unscored candidates are ignored. Records are sorted by augmentation id.
pub fn attribute(explored: &[CandidateProtocol], augmentations: &BTreeMap<String, Augmentation>) -> Vec<RewardRecord> {
    augmentations
        .iter()
        .map(|(id, aug)| {
            let mut with = Vec::new();
            let mut without = Vec::new();
            for c in explored {
                let Some(s) = c.score else { continue };
                if c.mods.contains(id) {
                    with.push(s);
                } else {
                    without.push(s);
                }
            }
            let r = (!with.is_empty() && !without.is_empty()).then(|| mean(&with) - mean(&without));
            RewardRecord {
                augmentation_id: id.clone(),
                r,
                n_with: with.len(),
                n_without: without.len(),
                v: aug.validation,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modification::{ActionType, ModificationSet, ValidationTier};
    use crate::protocol::{parse_protocol, Aspect, AspectRef, CanonicalHash};

    fn aug(i: usize) -> Augmentation {
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
        a
    }

    fn cand(mods: &[&Augmentation], score: Option<f64>) -> CandidateProtocol {
        let p = parse_protocol(
            r#"{"nct_id":"N","phase":"Phase 2","condition":"c","intervention/intervention_name":"i",
            "failure_reason":"enrollment","adverse_events":"","eligibility/inclusion_criteria":["a","b"],
            "eligibility/exclusion_criteria":["x"],"dosage":"d","target_primary_outcome":"o"}"#,
        )
        .unwrap();
        CandidateProtocol {
            base_hash: CanonicalHash::of_bytes(b""),
            mods: ModificationSet::from_members(mods.iter().map(|a| (*a).clone())),
            derived: p,
            hash: CanonicalHash::of_bytes(b""),
            score,
        }
    }

    #[test]
    fn two_by_two_grid() {
        let (a, b) = (aug(0), aug(1));
        let explored = vec![
            cand(&[], Some(0.4)),
            cand(&[&a], Some(0.6)),
            cand(&[&b], Some(0.3)),
            cand(&[&a, &b], Some(0.5)),
        ];
        let augs: BTreeMap<_, _> = [(a.id.clone(), a.clone()), (b.id.clone(), b.clone())].into();
        let rec = attribute(&explored, &augs);
        let ra = rec.iter().find(|r| r.augmentation_id == a.id).unwrap();
        let rb = rec.iter().find(|r| r.augmentation_id == b.id).unwrap();
        assert!((ra.r.unwrap() - 0.2).abs() < 1e-12);
        assert!((rb.r.unwrap() + 0.1).abs() < 1e-12);
        assert_eq!((ra.n_with, ra.n_without), (2, 2));
    }

    #[test]
    fn unattributable_when_always_present() {
        let a = aug(0);
        let explored = vec![cand(&[&a], Some(0.6)), cand(&[], None)];
        let augs: BTreeMap<_, _> = [(a.id.clone(), a.clone())].into();
        let rec = attribute(&explored, &augs);
        assert_eq!(rec[0].r, None);
        assert_eq!(rec[0].n_without, 0);
    }
}
