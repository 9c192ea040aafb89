//! Random factorial search spaces plus a brute-force evaluator that shares no
//! code with the library's apply, scoring or attribution paths.
#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reprotocol::explore::ChoiceGroup;
use reprotocol::oracle::{Scope, ScoringRule};
use reprotocol::{
    hash_protocol, ActionType, Aspect, AspectRef, Augmentation, CanonicalHash, FailureMode, Phase, ScoringSpec,
    TrialProtocol, ValidationTier,
};

pub struct Space {
    pub base: TrialProtocol,
    pub groups: Vec<ChoiceGroup>,
    pub spec: ScoringSpec,
}

impl Space {
    pub fn size(&self) -> usize {
        self.groups.iter().map(|g| g.options.len() + 1).product()
    }
}

fn passing(mut a: Augmentation, rng: &mut ChaCha8Rng) -> Augmentation {
    a.validation = [ValidationTier::Excellent, ValidationTier::Good, ValidationTier::Moderate][rng.random_range(0..3)];
    a
}

/// A base protocol with tokenised criteria and up to 256 candidates.
pub fn random_space(seed: u64) -> Space {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_inc = rng.random_range(2..5);
    let n_exc = rng.random_range(1..4);
    let base = TrialProtocol {
        nct_id: format!("RND{seed:05}"),
        phase: Phase::Phase2,
        condition: "Condition".into(),
        intervention_name: "Drug".into(),
        failure_reason: FailureMode::PoorEnrollment,
        adverse_events: String::new(),
        inclusion_criteria: (0..n_inc).map(|i| format!("inc{i} baseline rule")).collect(),
        exclusion_criteria: (0..n_exc).map(|i| format!("exc{i} baseline rule")).collect(),
        dosage: "dose0 10mg daily".into(),
        target_primary_outcome: "out0 week 12".into(),
        extras: BTreeMap::new(),
    };

    let mut tokens: Vec<String> = (0..n_inc).map(|i| format!("inc{i}")).collect();
    tokens.extend((0..n_exc).map(|i| format!("exc{i}")));
    tokens.push("dose0".into());

    let mut groups: Vec<ChoiceGroup> = Vec::new();
    let mut product = 1usize;
    let mut next = 0usize;
    let mut fresh = |rng: &mut ChaCha8Rng, tokens: &mut Vec<String>| {
        next += 1;
        let t = format!("opt{next}");
        tokens.push(t.clone());
        let shared = if rng.random_bool(0.3) { " shared" } else { "" };
        format!("{t} revised text{shared}")
    };
    let mut slots_left: Vec<usize> = (0..n_inc).collect();
    let target_groups = rng.random_range(1..6);
    for g in 0..target_groups {
        let n_opts = rng.random_range(1..4);
        if product * (n_opts + 1) > 256 {
            break;
        }
        let kind = if g == 0 || !slots_left.is_empty() && rng.random_bool(0.5) {
            0
        } else {
            rng.random_range(1..3)
        };
        let options: Vec<Augmentation> = match kind {
            0 if !slots_left.is_empty() => {
                let i = slots_left.remove(rng.random_range(0..slots_left.len()));
                let target = AspectRef::list_item(Aspect::InclusionCriteria, i);
                (0..n_opts)
                    .map(|k| {
                        let a = if k == 0 && rng.random_bool(0.5) {
                            Augmentation::new(target, ActionType::Delete, None, "", rng.random(), "")
                        } else {
                            let v = fresh(&mut rng, &mut tokens);
                            Augmentation::new(target, ActionType::Modify, Some(v), "", rng.random(), "")
                        };
                        passing(a.unwrap(), &mut rng)
                    })
                    .collect()
            }
            2 if !groups.iter().any(|g| g.slot.aspect == Aspect::Dosage) => (0..n_opts)
                .map(|_| {
                    let v = fresh(&mut rng, &mut tokens);
                    let a = Augmentation::new(AspectRef::whole(Aspect::Dosage), ActionType::Modify, Some(v), "", rng.random(), "");
                    passing(a.unwrap(), &mut rng)
                })
                .collect(),
            _ => {
                let tag = format!("g{g}");
                (0..n_opts)
                    .map(|_| {
                        let v = fresh(&mut rng, &mut tokens);
                        let a = Augmentation::new(AspectRef::whole(Aspect::ExclusionCriteria), ActionType::Add, Some(v), "", rng.random(), &tag);
                        passing(a.unwrap(), &mut rng)
                    })
                    .collect()
            }
        };
        let mut options = options;
        options.sort_by(|a, b| a.id.cmp(&b.id));
        product *= options.len() + 1;
        groups.push(ChoiceGroup { slot: options[0].slot.clone(), options });
    }
    groups.sort_by(|a, b| a.slot.cmp(&b.slot));

    tokens.push("shared".into());
    tokens.push("baseline".into());
    let mut rules = Vec::new();
    for t in tokens {
        if rng.random_bool(0.7) {
            let scope = if rng.random_bool(0.25) {
                Scope::only(&[[Aspect::InclusionCriteria, Aspect::ExclusionCriteria, Aspect::Dosage][rng.random_range(0..3)]])
            } else {
                Scope::default()
            };
            let w = (rng.random_range(-150..=150) as f64) / 1000.0;
            rules.push(ScoringRule::literal(t, scope, w));
        }
    }
    let base_score = (rng.random_range(300..=700) as f64) / 1000.0;
    Space { base, groups, spec: ScoringSpec::new(base_score, rules) }
}

/// One option index per group, `None` for the no-op.
pub type Choice = Vec<Option<usize>>;

pub fn all_choices(space: &Space) -> Vec<Choice> {
    let mut out: Vec<Choice> = vec![Vec::new()];
    for g in &space.groups {
        let mut next = Vec::new();
        for c in &out {
            for o in std::iter::once(None).chain((0..g.options.len()).map(Some)) {
                let mut c2 = c.clone();
                c2.push(o);
                next.push(c2);
            }
        }
        out = next;
    }
    out
}

pub fn chosen<'a>(space: &'a Space, c: &Choice) -> Vec<&'a Augmentation> {
    space
        .groups
        .iter()
        .zip(c)
        .filter_map(|(g, o)| o.map(|k| &g.options[k]))
        .collect()
}

/// Derived protocol built by direct list surgery. Added criteria follow the
/// base list in augmentation-id order.
pub fn derive(space: &Space, c: &Choice) -> TrialProtocol {
    let mods = chosen(space, c);
    let mut p = space.base.clone();
    for aspect in [Aspect::InclusionCriteria, Aspect::ExclusionCriteria] {
        let base_list = match aspect {
            Aspect::InclusionCriteria => &space.base.inclusion_criteria,
            _ => &space.base.exclusion_criteria,
        };
        let mut list = Vec::new();
        for (i, text) in base_list.iter().enumerate() {
            let hit = mods.iter().find(|m| m.target.aspect == aspect && m.target.index == Some(i));
            match hit {
                Some(m) if m.action == ActionType::Delete => {}
                Some(m) => list.push(m.value.clone().unwrap()),
                None => list.push(text.clone()),
            }
        }
        let mut adds: Vec<&&Augmentation> = mods
            .iter()
            .filter(|m| m.target.aspect == aspect && m.action == ActionType::Add)
            .collect();
        adds.sort_by(|a, b| a.id.cmp(&b.id));
        list.extend(adds.into_iter().map(|m| m.value.clone().unwrap()));
        match aspect {
            Aspect::InclusionCriteria => p.inclusion_criteria = list,
            _ => p.exclusion_criteria = list,
        }
    }
    if let Some(m) = mods.iter().find(|m| m.target.aspect == Aspect::Dosage) {
        p.dosage = m.value.clone().unwrap();
    }
    p
}

/// Additive substring scorer over the four modifiable aspects.
pub fn brute_score(spec: &ScoringSpec, p: &TrialProtocol) -> f64 {
    let texts = |a: Aspect| -> Vec<&str> {
        match a {
            Aspect::InclusionCriteria => p.inclusion_criteria.iter().map(String::as_str).collect(),
            Aspect::ExclusionCriteria => p.exclusion_criteria.iter().map(String::as_str).collect(),
            Aspect::Dosage => vec![p.dosage.as_str()],
            Aspect::TargetPrimaryOutcome => vec![p.target_primary_outcome.as_str()],
        }
    };
    let mut s = spec.base;
    for rule in &spec.rules {
        let scope: Vec<Aspect> = match &rule.aspect_scope {
            Scope::Only(v) => v.clone(),
            Scope::All(_) => vec![
                Aspect::InclusionCriteria,
                Aspect::ExclusionCriteria,
                Aspect::Dosage,
                Aspect::TargetPrimaryOutcome,
            ],
        };
        if scope.iter().any(|a| texts(*a).iter().any(|t| t.contains(&rule.pattern))) {
            s += rule.weight;
        }
    }
    s.clamp(spec.clamp[0], spec.clamp[1])
}

pub struct Enumerated {
    pub choice: Choice,
    pub ids: Vec<String>,
    pub score: f64,
    pub hash: CanonicalHash,
}

pub fn enumerate(space: &Space) -> Vec<Enumerated> {
    all_choices(space)
        .into_iter()
        .map(|c| {
            let p = derive(space, &c);
            let mut ids: Vec<String> = chosen(space, &c).iter().map(|a| a.id.clone()).collect();
            ids.sort();
            Enumerated { score: brute_score(&space.spec, &p), hash: hash_protocol(&p), ids, choice: c }
        })
        .collect()
}

/// Highest score, ties to the lowest canonical hash.
pub fn brute_argmax(rows: &[Enumerated]) -> &Enumerated {
    rows.iter()
        .min_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.hash.cmp(&b.hash)))
        .unwrap()
}

/// Mean score with `id` minus mean score without it, over every row.
pub fn brute_reward(rows: &[Enumerated], id: &str) -> Option<f64> {
    let (mut sw, mut nw, mut so, mut no) = (0.0, 0usize, 0.0, 0usize);
    for r in rows {
        if r.ids.iter().any(|x| x == id) {
            sw += r.score;
            nw += 1;
        } else {
            so += r.score;
            no += 1;
        }
    }
    (nw > 0 && no > 0).then(|| sw / nw as f64 - so / no as f64)
}

use reprotocol::engine::{batch, Backends, BatchItem, BatchOutcome, RunConfig};
use reprotocol::synthetic::SyntheticTrial;
use reprotocol::{GlobalMemory, ReferenceOracle, ScriptedProvider};

/// Runs a synthetic corpus through the batch runner with fresh global memory.
pub fn run_corpus(corpus: &[SyntheticTrial], cfg: &RunConfig) -> (BatchOutcome, GlobalMemory) {
    let providers: Vec<ScriptedProvider> = corpus.iter().map(|t| ScriptedProvider::new(t.playbook.clone())).collect();
    let oracles: Vec<ReferenceOracle> =
        corpus.iter().map(|t| ReferenceOracle::new(t.scoring.clone()).unwrap()).collect();
    let items: Vec<BatchItem> = corpus
        .iter()
        .zip(providers.iter().zip(&oracles))
        .map(|(t, (p, o))| BatchItem {
            protocol: t.protocol.clone(),
            mode: t.spec.failure_mode,
            backends: Backends { provider: p, oracle: o, evidence: None },
        })
        .collect();
    let mut global = GlobalMemory::default();
    let out = batch(&items, &mut global, cfg);
    (out, global)
}
