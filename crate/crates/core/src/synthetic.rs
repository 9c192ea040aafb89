//! Seeded planted-truth corpora for end-to-end checks.
//!
//! Every synthetic trial pairs a protocol with a reference scoring spec and a
//! scripted playbook. Flaws are planted as literal scoring rules and the
//! playbook proposes their fixes at known iterations, so the improvement a
//! correct engine must reach is known in advance.

use std::fs;
use std::io;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agents::{ScriptedPlaybook, Stage};
use crate::engine::{BatchManifest, ManifestEntry};
use crate::modification::{ActionType, Augmentation, Category, SlotKey};
use crate::oracle::{ReferenceOracle, ScoringRule, ScoringSpec, Scope};
use crate::protocol::{Aspect, AspectRef, FailureMode, Phase, TrialProtocol};

token_enum! {
    Scenario {
        Planted => "planted",
        EmptyAnalysis => "empty_analysis",
        Neutral => "neutral",
        Decoy => "decoy",
    }
}

/// One planted flaw and the change that removes it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedFlaw {
    pub aspect: Aspect,
    pub action: ActionType,
    /// Text present in the original protocol.
    pub original: Option<String>,
    /// Text the playbook proposes.
    pub fix: Option<String>,
    /// Literal the oracle rewards or penalizes.
    pub pattern: String,
    /// Score gain once the fix is adopted.
    pub gain: f64,
    pub iteration: usize,
    pub proposed: bool,
}

/// Ground truth for one synthetic trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTrialSpec {
    pub seed: u64,
    pub nct_id: String,
    pub failure_mode: FailureMode,
    pub scenario: Scenario,
    pub planted: Vec<PlantedFlaw>,
    /// Criteria the playbook wrongly asks to delete.
    #[serde(default)]
    pub decoys: Vec<String>,
    pub expected_p0: f64,
    pub expected_delta_p: f64,
}

#[derive(Debug, Clone)]
pub struct SyntheticTrial {
    pub spec: SyntheticTrialSpec,
    pub protocol: TrialProtocol,
    pub scoring: ScoringSpec,
    pub playbook: ScriptedPlaybook,
}

#[derive(Clone, Copy, PartialEq)]
enum Scored {
    /// The original text carries a penalty.
    Original,
    /// The fix carries a bonus.
    Fix,
}

#[derive(Clone, Copy)]
struct Template {
    aspect: Aspect,
    action: ActionType,
    original: Option<&'static str>,
    fix: Option<&'static str>,
    pattern: &'static str,
    scored: Scored,
    neutral: Option<&'static str>,
    bad: Option<&'static str>,
    banned: Option<&'static str>,
    strategy: &'static str,
    category: Option<Category>,
}

#[allow(clippy::too_many_arguments)]
const fn modify(
    aspect: Aspect,
    original: &'static str,
    fix: &'static str,
    pattern: &'static str,
    scored: Scored,
    neutral: &'static str,
    strategy: &'static str,
    category: Option<Category>,
) -> Template {
    Template {
        aspect,
        action: ActionType::Modify,
        original: Some(original),
        fix: Some(fix),
        pattern,
        scored,
        neutral: Some(neutral),
        bad: None,
        banned: None,
        strategy,
        category,
    }
}

const fn delete(aspect: Aspect, original: &'static str, strategy: &'static str, category: Option<Category>) -> Template {
    Template {
        aspect,
        action: ActionType::Delete,
        original: Some(original),
        fix: None,
        pattern: original,
        scored: Scored::Original,
        neutral: None,
        bad: None,
        banned: None,
        strategy,
        category,
    }
}

const fn add(aspect: Aspect, fix: &'static str, neutral: &'static str, strategy: &'static str) -> Template {
    Template {
        aspect,
        action: ActionType::Add,
        original: None,
        fix: Some(fix),
        pattern: fix,
        scored: Scored::Fix,
        neutral: Some(neutral),
        bad: None,
        banned: None,
        strategy,
        category: None,
    }
}

use Aspect::{Dosage, ExclusionCriteria as Excl, InclusionCriteria as Incl, TargetPrimaryOutcome as Outcome};

const BARRIER: Option<Category> = Some(Category::ParticipationBarrier);
const SAFETY: Option<Category> = Some(Category::SafetyExclusion);
const SELECTION: Option<Category> = Some(Category::SelectionCriterion);

fn enrollment_library() -> Vec<Template> {
    vec![
        Template {
            bad: Some("No follow-up visits are required"),
            ..modify(
                Incl,
                "Must attend weekly in-person visits at the central study site for 52 weeks",
                "Must attend monthly visits at any participating site, with remote check-ins in between",
                "weekly in-person visits",
                Scored::Original,
                "Must attend weekly in-person visits at the central study site for 48 weeks",
                "Cut the visit burden",
                BARRIER,
            )
        },
        Template {
            bad: Some("Any treatment history is acceptable, including none"),
            ..modify(
                Incl,
                "Must have failed at least four prior lines of standard therapy",
                "Must have received at least one prior line of standard therapy",
                "at least four prior lines",
                Scored::Original,
                "Must have failed at least four prior lines of any standard therapy",
                "Relax the prior treatment requirement",
                BARRIER,
            )
        },
        modify(
            Incl,
            "Must live within 10 miles of the study center",
            "Must be able to reach a participating site or accept home health visits",
            "within 10 miles",
            Scored::Original,
            "Must live within 10 miles of the study center or its annex",
            "Drop the distance limit",
            BARRIER,
        ),
        modify(
            Incl,
            "Body mass index between 22 and 24 kg/m2",
            "Body mass index between 18 and 35 kg/m2",
            "between 22 and 24 kg/m2",
            Scored::Original,
            "Body mass index between 22 and 24 kg/m2 at two screening visits",
            "Widen the weight window",
            SELECTION,
        ),
        modify(
            Excl,
            "Use of any prescription medication within the past 12 weeks",
            "Use of strong CYP3A4 inhibitors within the past 2 weeks",
            "any prescription medication within the past 12 weeks",
            Scored::Original,
            "Use of any prescription medication within the past 12 weeks, including topical agents",
            "Narrow the medication exclusion",
            BARRIER,
        ),
        delete(Incl, "Must agree to an overnight stay in the research unit after every dose", "Remove the overnight stays", BARRIER),
        delete(Incl, "Must provide a fresh tissue biopsy at every scheduled visit", "Remove repeated biopsies", BARRIER),
        delete(Excl, "Unwilling to postpone elective surgery until the study has ended", "Stop excluding patients with planned surgery", BARRIER),
        delete(Excl, "Any use of over-the-counter supplements in the past 6 months", "Stop excluding supplement users", BARRIER),
        add(
            Incl,
            "Follow-up visits may be completed by telemedicine when clinically appropriate",
            "Follow-up visits follow the usual schedule of the site",
            "Allow remote follow-up",
        ),
        add(
            Incl,
            "Travel costs are reimbursed for participants living more than 50 miles away",
            "Participants are told about travel arrangements at screening",
            "Offset travel costs",
        ),
    ]
}

fn safety_library() -> Vec<Template> {
    vec![
        Template {
            banned: Some("{drug} 600 mg orally twice daily"),
            ..modify(
                Dosage,
                "{drug} 400 mg orally twice daily",
                "{drug} 200 mg orally once daily with dose holds for grade 3 toxicity",
                "400 mg orally twice daily",
                Scored::Original,
                "{drug} 400 mg orally twice daily with food",
                "Lower the exposure",
                None,
            )
        },
        add(
            Excl,
            "QTc interval above 470 ms at screening",
            "Abnormal electrocardiogram at screening judged clinically significant",
            "Exclude patients at risk of QT prolongation",
        ),
        add(
            Excl,
            "Severe hepatic impairment (Child-Pugh class C)",
            "Hepatic disease judged relevant by the investigator",
            "Exclude patients who cannot clear the drug",
        ),
        modify(
            Incl,
            "Platelet count of at least 50,000 per microliter",
            "Platelet count of at least 100,000 per microliter",
            "at least 50,000 per microliter",
            Scored::Original,
            "Platelet count of at least 50,000 per microliter without transfusion",
            "Raise the platelet floor",
            SAFETY,
        ),
        modify(
            Incl,
            "Creatinine clearance of at least 30 mL/min",
            "Creatinine clearance of at least 60 mL/min",
            "at least 30 mL/min",
            Scored::Original,
            "Creatinine clearance of at least 30 mL/min by the Cockcroft-Gault formula",
            "Require adequate renal clearance",
            SAFETY,
        ),
        delete(Incl, "Prior grade 3 hepatotoxicity on a related agent is permitted", "Stop admitting patients with prior liver injury", SAFETY),
        modify(
            Outcome,
            "Objective response rate at week 12",
            "Objective response rate at week 12 with weekly liver panels and predefined stopping rules",
            "predefined stopping rules",
            Scored::Fix,
            "Objective response rate assessed at week 12",
            "Build monitoring into the endpoint",
            None,
        ),
    ]
}

fn efficacy_library() -> Vec<Template> {
    vec![
        modify(
            Dosage,
            "{drug} 5 mg orally once daily",
            "{drug} 20 mg orally once daily after a two-week titration",
            "{drug} 5 mg orally once daily",
            Scored::Original,
            "{drug} 5 mg orally once daily taken in the evening",
            "Raise exposure to the effective range",
            None,
        ),
        add(
            Incl,
            "Confirmed {marker}-positive disease by central laboratory testing",
            "Biomarker status recorded at screening",
            "Enrich for likely responders",
        ),
        modify(
            Outcome,
            "Overall survival at 5 years",
            "Progression-free survival at 12 months",
            "Overall survival at 5 years",
            Scored::Original,
            "Overall survival at 5 years in the intention-to-treat population",
            "Use an endpoint the trial can power",
            None,
        ),
        modify(
            Incl,
            "Any disease stage is eligible",
            "Moderate to severe disease at baseline by a validated severity score",
            "Any disease stage",
            Scored::Original,
            "Any disease stage is eligible if measurable",
            "Select patients with room to improve",
            SELECTION,
        ),
        delete(Incl, "Symptom duration of more than 20 years", "Stop selecting burnt-out disease", SELECTION),
        add(
            Incl,
            "At least two documented flares in the past year",
            "Disease history documented in the medical record",
            "Enrich for active disease",
        ),
    ]
}

const NEUTRAL_INCLUSION: &[&str] = &[
    "Diagnosis of {condition} confirmed by a specialist",
    "Adequate hepatic function with ALT and AST below 2.5 times the upper limit of normal",
    "Willing to use effective contraception for the duration of the study",
    "ECOG performance status of 0 to 2",
    "Stable background therapy for at least 4 weeks before randomization",
    "Hemoglobin of at least 9 g/dL",
];

const NEUTRAL_EXCLUSION: &[&str] = &[
    "Pregnant or breastfeeding",
    "Participation in another interventional study within 30 days",
    "Known hypersensitivity to the study drug or its excipients",
    "Active uncontrolled infection requiring systemic therapy",
    "History of alcohol or drug abuse within the past year",
    "Major surgery within 4 weeks before the first dose",
    "Uncontrolled hypertension at screening",
];

/// Base criteria with harmful rewrites the playbook proposes at iterations
/// 1 and 2: (criterion, rewrites, penalized literal).
const HARMFUL: &[(&str, [&str; 2], &str)] = &[
    (
        "Age 18 years or older at screening",
        ["Age 18 to 40 years at screening", "Age 18 to 40 years at the screening visit"],
        "Age 18 to 40 years",
    ),
    (
        "Able to provide written informed consent",
        [
            "Able to provide written informed consent in person at the central site",
            "Able to provide written informed consent in person at the central site only",
        ],
        "in person at the central site",
    ),
];

const CONDITIONS: &[&str] = &[
    "moderate plaque psoriasis",
    "relapsed follicular lymphoma",
    "early rheumatoid arthritis",
    "chronic migraine",
    "type 2 diabetes",
    "idiopathic pulmonary fibrosis",
];
const MARKERS: &[&str] = &["HER2", "PD-L1", "FGFR3", "IL-17A"];

fn fill(text: &str, drug: &str, condition: &str, marker: &str) -> String {
    text.replace("{drug}", drug)
        .replace("{condition}", condition)
        .replace("{marker}", marker)
}

fn round3(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

/// A target the playbook proposes at one iteration.
struct Proposal {
    aspect: Aspect,
    action: ActionType,
    /// Current text of the element, for list items.
    locate: Option<String>,
    strategy: String,
    confidence: f64,
    category: Option<Category>,
    variants: Vec<(String, &'static str)>,
}

struct Builder {
    rng: ChaCha8Rng,
    drug: String,
    condition: String,
    marker: String,
}

impl Builder {
    fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let drug = format!("RX-{}", rng.random_range(1000..10000));
        let condition = (*CONDITIONS.choose(&mut rng).expect("non-empty")).to_owned();
        let marker = (*MARKERS.choose(&mut rng).expect("non-empty")).to_owned();
        Self {
            rng,
            drug,
            condition,
            marker,
        }
    }

    fn fill(&self, text: &str) -> String {
        fill(text, &self.drug, &self.condition, &self.marker)
    }

    fn gain(&mut self, lo: u32, hi: u32) -> f64 {
        self.rng.random_range(lo..=hi) as f64 / 1000.0
    }

    fn confidence(&mut self, lo: u32, hi: u32) -> f64 {
        self.rng.random_range(lo..=hi) as f64 / 100.0
    }

    fn neutral_lists(&mut self, n_incl: usize, n_excl: usize) -> (Vec<String>, Vec<String>) {
        let mut incl: Vec<String> = NEUTRAL_INCLUSION
            .choose_multiple(&mut self.rng, n_incl)
            .map(|s| self.fill(s))
            .collect();
        incl.extend(HARMFUL.iter().map(|h| h.0.to_owned()));
        incl.shuffle(&mut self.rng);
        let excl: Vec<String> = NEUTRAL_EXCLUSION
            .choose_multiple(&mut self.rng, n_excl)
            .map(|s| self.fill(s))
            .collect();
        (incl, excl)
    }

    fn insert_random(&mut self, list: &mut Vec<String>, text: String) {
        let at = self.rng.random_range(0..=list.len());
        list.insert(at, text);
    }
}

fn base_protocol(b: &Builder, nct_id: String, mode: FailureMode) -> TrialProtocol {
    let adverse_events = match mode {
        FailureMode::SafetyAdverseEffect => "Grade 3 hepatotoxicity in 18% of participants; 4 discontinuations for QT prolongation",
        FailureMode::LackOfEfficacy => "Mild headache and nausea at rates similar to placebo",
        FailureMode::PoorEnrollment => "No serious adverse events among the 11 participants enrolled",
    };
    TrialProtocol {
        nct_id,
        phase: Phase::Phase2,
        condition: b.condition.clone(),
        intervention_name: b.drug.clone(),
        failure_reason: mode,
        adverse_events: adverse_events.into(),
        inclusion_criteria: Vec::new(),
        exclusion_criteria: Vec::new(),
        dosage: b.fill("{drug} 100 mg orally once daily"),
        target_primary_outcome: "Change from baseline in disease activity score at week 24".into(),
        extras: Default::default(),
    }
}

fn rule(aspect: Aspect, pattern: &str, weight: f64) -> ScoringRule {
    ScoringRule::literal(pattern, Scope::only(&[aspect]), weight)
}

/// Score base that puts the original protocol at `p0`.
fn calibrate(rules: &[ScoringRule], t0: &TrialProtocol, p0: f64) -> ScoringSpec {
    let raw = ReferenceOracle::new(ScoringSpec::new(0.0, rules.to_vec()))
        .expect("generated rules are literal")
        .raw_score(t0);
    ScoringSpec::new(p0 - raw, rules.to_vec())
}

fn flaw_from(b: &Builder, t: &Template, gain: f64, iteration: usize, proposed: bool) -> PlantedFlaw {
    PlantedFlaw {
        aspect: t.aspect,
        action: t.action,
        original: t.original.map(|s| b.fill(s)),
        fix: t.fix.map(|s| b.fill(s)),
        pattern: b.fill(t.pattern),
        gain,
        iteration,
        proposed,
    }
}

fn flaw_rule(f: &PlantedFlaw, scored: Scored) -> ScoringRule {
    match scored {
        Scored::Original => rule(f.aspect, &f.pattern, -f.gain),
        Scored::Fix => rule(f.aspect, &f.pattern, f.gain),
    }
}

/// Places the original text of each flaw. Deletions go to the tail of their
/// list, the earliest iteration last.
fn place_flaws(b: &mut Builder, p: &mut TrialProtocol, flaws: &[PlantedFlaw]) {
    for f in flaws.iter().filter(|f| f.action == ActionType::Modify) {
        let text = f.original.clone().expect("modify has an original");
        match f.aspect {
            Dosage => p.dosage = text,
            Outcome => p.target_primary_outcome = text,
            a => {
                let mut list = std::mem::take(p.list_mut(a).expect("list aspect"));
                b.insert_random(&mut list, text);
                *p.list_mut(a).expect("list aspect") = list;
            }
        }
    }
    let mut deletes: Vec<&PlantedFlaw> = flaws.iter().filter(|f| f.action == ActionType::Delete).collect();
    deletes.sort_by_key(|f| std::cmp::Reverse(f.iteration));
    for f in deletes {
        p.list_mut(f.aspect)
            .expect("list aspect")
            .push(f.original.clone().expect("delete has an original"));
    }
}

fn proposal_for(b: &Builder, t: &Template, f: &PlantedFlaw, confidence: f64) -> Proposal {
    let mut variants = Vec::new();
    if let Some(fix) = &f.fix {
        variants.push((fix.clone(), "EXCELLENT"));
    }
    if let Some(n) = t.neutral {
        variants.push((b.fill(n), "MODERATE"));
    }
    if let Some(x) = t.bad {
        variants.push((b.fill(x), "BAD"));
    } else if let Some(x) = t.banned {
        variants.push((b.fill(x), "BANNED"));
    }
    Proposal {
        aspect: t.aspect,
        action: t.action,
        locate: f.original.clone().filter(|_| t.aspect.is_list() && t.action != ActionType::Add),
        strategy: t.strategy.to_owned(),
        confidence,
        category: t.category,
        variants,
    }
}

fn harmful_proposal(i: usize, confidence: f64) -> Proposal {
    let (base, rewrites, _) = HARMFUL[i];
    Proposal {
        aspect: Incl,
        action: ActionType::Modify,
        locate: Some(base.to_owned()),
        strategy: "Tighten the population".into(),
        confidence,
        category: SELECTION,
        variants: rewrites.iter().map(|r| ((*r).to_owned(), "GOOD")).collect(),
    }
}

fn locate(p: &TrialProtocol, pr: &Proposal) -> AspectRef {
    match (&pr.locate, pr.action) {
        (_, ActionType::Add) | (None, _) => AspectRef::whole(pr.aspect),
        (Some(text), _) => {
            let i = p
                .list(pr.aspect)
                .and_then(|l| l.iter().position(|x| x == text))
                .unwrap_or_else(|| panic!("generator lost track of {text:?}"));
            AspectRef::list_item(pr.aspect, i)
        }
    }
}

fn tradeoff_block(r: &AspectRef, pr: &Proposal) -> String {
    let index = r.index.map_or("None".to_owned(), |i| i.to_string());
    let category = pr
        .category
        .map(|c| format!("<category>{c}</category>"))
        .unwrap_or_default();
    let body = format!(
        "<recommendation>{}</recommendation><confidence>{:.2}</confidence><strategy>{}</strategy>\
         <reasoning>{}</reasoning><impact_level>MAJOR</impact_level>{category}",
        pr.action, pr.confidence, pr.strategy, pr.strategy
    );
    match r.aspect {
        Dosage => format!("<dosage_tradeoff>{body}</dosage_tradeoff>"),
        Outcome => format!("<outcome_tradeoff>{body}</outcome_tradeoff>"),
        a => format!("<tradeoff aspect_name=\"{a}\" index=\"{index}\">{body}</tradeoff>"),
    }
}

fn classification_block(r: &AspectRef, c: Category) -> String {
    let score = |x: Category| if x == c { "0.85" } else { "0.10" };
    format!(
        "<classification aspect_name=\"{}\" index=\"{}\">\
         <participation_barrier_score>{}</participation_barrier_score>\
         <safety_exclusion_score>{}</safety_exclusion_score>\
         <selection_criterion_score>{}</selection_criterion_score>\
         <enrichment_criterion_score>{}</enrichment_criterion_score>\
         <primary_category>{c}</primary_category><reasoning>Scored from the criterion wording.</reasoning></classification>",
        r.aspect,
        r.index.map_or("None".to_owned(), |i| i.to_string()),
        score(Category::ParticipationBarrier),
        score(Category::SafetyExclusion),
        score(Category::SelectionCriterion),
        score(Category::EnrichmentCriterion),
    )
}

fn augment_completion(aspect: Aspect, variants: &[(String, &'static str)]) -> String {
    let mut out = String::from("<augmentations>\n");
    for (v, _) in variants {
        if aspect == Dosage {
            out.push_str(&format!(
                "<augmentation><dosage_modification>{v}</dosage_modification><rationale>Adjusted regimen.</rationale></augmentation>\n"
            ));
        } else {
            out.push_str(&format!("<augmentation><value>{v}</value><rationale>Revised wording.</rationale></augmentation>\n"));
        }
    }
    out.push_str("</augmentations>");
    out
}

fn verdict(tier: &str) -> String {
    format!("<verdict><tier>{tier}</tier><reason>Judged against the stated strategy.</reason></verdict>")
}

/// Writes the tradeoff, classification, augment and validation entries for
/// one set of proposals located against `p`.
fn script(playbook: &mut ScriptedPlaybook, iteration: Option<usize>, p: &TrialProtocol, proposals: &[Proposal]) {
    let mut tradeoffs = String::from("<tradeoffs>\n");
    let mut classes = String::new();
    for pr in proposals {
        let r = locate(p, pr);
        tradeoffs.push_str(&tradeoff_block(&r, pr));
        tradeoffs.push('\n');
        if let (Some(_), Some(c)) = (r.index, pr.category) {
            classes.push_str(&classification_block(&r, c));
            classes.push('\n');
        }
        if pr.action == ActionType::Delete {
            continue;
        }
        let slot = SlotKey::for_target(&r, pr.action, &SlotKey::add_tag(r.aspect, &pr.strategy));
        let subject = slot.to_string();
        playbook.add(Stage::Augment, iteration, Some(&subject), augment_completion(r.aspect, &pr.variants));
        for (v, tier) in &pr.variants {
            let id = Augmentation::compute_id(&slot, pr.action, Some(v));
            playbook.add(Stage::Validate, iteration, Some(&id), verdict(tier));
        }
    }
    tradeoffs.push_str("</tradeoffs>");
    playbook.add(Stage::Tradeoff, iteration, None, tradeoffs);
    if iteration.is_some() {
        playbook.add(Stage::Classify, iteration, None, classes);
    }
}

fn shared_entries(playbook: &mut ScriptedPlaybook, b: &Builder, mode: FailureMode) {
    playbook.add(Stage::Tradeoff, None, None, "<tradeoffs></tradeoffs>");
    playbook.add(Stage::Classify, None, None, "No criteria stand out.");
    playbook.add(
        Stage::Mechanism,
        None,
        None,
        format!(
            "<mechanism_analysis>{} acts on a pathway implicated in {}.</mechanism_analysis>\
             <missing_enrichment_criterion>None</missing_enrichment_criterion>",
            b.drug, b.condition
        ),
    );
    playbook.add(Stage::Prioritize, None, None, "<prioritization></prioritization>");
    playbook.add(Stage::Validate, None, None, verdict("GOOD"));
    match mode {
        FailureMode::SafetyAdverseEffect => playbook.add(
            Stage::Profile,
            None,
            None,
            "<adverse_event_profile><primary_toxicity><event>hepatotoxicity</event><grade>3</grade>\
             <incidence>18%</incidence><organ_system>liver</organ_system><priority>high</priority>\
             <dose_dependent>yes</dose_dependent></primary_toxicity>\
             <mechanism_consistency>on-target</mechanism_consistency>\
             <root_cause_hypothesis>Exposure above the tolerated range.</root_cause_hypothesis>\
             <critical_gaps><gap>No liver monitoring schedule</gap></critical_gaps></adverse_event_profile>",
        ),
        _ => playbook.add(
            Stage::Profile,
            None,
            None,
            "<efficacy_gap_profile>Exposure and population both look too broad.</efficacy_gap_profile>",
        ),
    }
    playbook.add(
        Stage::Pivots,
        None,
        None,
        "<design_pivots><trial_type>interventional</trial_type><endpoint_family>unchanged</endpoint_family>\
         <dose_regimen_direction>hold</dose_regimen_direction><route_change>no</route_change>\
         <sample_size_direction>hold</sample_size_direction><design_structure>parallel</design_structure>\
         <summary>Keep the design and revise the details.</summary></design_pivots>",
    );
    playbook.add(
        Stage::Summarize,
        None,
        None,
        "<guidance>\
         <entry key=\"PARTICIPATION_BARRIER\">Loosening visit and travel demands tended to pay off.</entry>\
         <entry key=\"SAFETY_EXCLUSION\">Screening out organ dysfunction tended to pay off.</entry>\
         <entry key=\"SELECTION_CRITERION\">Targeting patients with active disease tended to pay off.</entry>\
         <entry key=\"ENRICHMENT_CRITERION\">Biomarker enrichment tended to pay off.</entry>\
         <entry key=\"dosage\">Matching exposure to the failure mode tended to pay off.</entry>\
         <entry key=\"target_primary_outcome\">Feasible endpoints tended to pay off.</entry>\
         </guidance>",
    );
}

fn apply_fix(p: &mut TrialProtocol, f: &PlantedFlaw) {
    match (f.action, f.aspect) {
        (ActionType::Modify, Dosage) => p.dosage = f.fix.clone().expect("fix"),
        (ActionType::Modify, Outcome) => p.target_primary_outcome = f.fix.clone().expect("fix"),
        (ActionType::Modify, a) => {
            let orig = f.original.as_deref().expect("original");
            let list = p.list_mut(a).expect("list");
            let i = list.iter().position(|x| x == orig).expect("present");
            list[i] = f.fix.clone().expect("fix");
        }
        (ActionType::Delete, a) => {
            let orig = f.original.as_deref().expect("original");
            p.list_mut(a).expect("list").retain(|x| x != orig);
        }
        (ActionType::Add, a) => p.list_mut(a).expect("list").push(f.fix.clone().expect("fix")),
    }
}

fn trial_id(prefix: &str, seed: u64, i: usize) -> String {
    format!("{prefix}{:04}{:03}", seed % 10_000, i)
}

fn mode_for(i: usize) -> FailureMode {
    [
        FailureMode::PoorEnrollment,
        FailureMode::SafetyAdverseEffect,
        FailureMode::LackOfEfficacy,
    ][i % 3]
}

fn library(mode: FailureMode) -> Vec<Template> {
    match mode {
        FailureMode::PoorEnrollment => enrollment_library(),
        FailureMode::SafetyAdverseEffect => safety_library(),
        FailureMode::LackOfEfficacy => efficacy_library(),
    }
}

/// Scenario of trial `i` in a planted corpus of `n` trials.
fn scenario_for(i: usize, n: usize) -> Scenario {
    if n >= 4 && i == n / 2 {
        Scenario::EmptyAnalysis
    } else if n >= 4 && i == n - 1 {
        Scenario::Neutral
    } else {
        Scenario::Planted
    }
}

/// One planted trial.
///
/// Planted trials get two fixes at iteration 1, one at iteration 2 and, for
/// about half of them, one at iteration 3, with gains shrinking from one
/// iteration to the next. The playbook also proposes a harmful rewrite at
/// iterations 1 and 2, plus neutral and rejected variants alongside each fix.
pub fn planted_trial(seed: u64, nct_id: String, mode: FailureMode, scenario: Scenario) -> SyntheticTrial {
    let mut b = Builder::new(seed);
    let mut t0 = base_protocol(&b, nct_id.clone(), mode);
    let n_incl = b.rng.random_range(3..=5);
    let n_excl = b.rng.random_range(3..=5);
    let (incl, excl) = b.neutral_lists(n_incl, n_excl);
    t0.inclusion_criteria = incl;
    t0.exclusion_criteria = excl;

    let mut lib = library(mode);
    let mut order: Vec<usize> = (0..lib.len()).collect();
    order.shuffle(&mut b.rng);
    if mode == FailureMode::SafetyAdverseEffect {
        order.retain(|&i| i != 0);
        order.insert(0, 0);
    }
    let schedule: Vec<usize> = match scenario {
        Scenario::Planted if b.rng.random_bool(0.5) => vec![1, 1, 2, 3],
        Scenario::Planted => vec![1, 1, 2],
        _ => vec![0, 0],
    };
    let mut flaws = Vec::new();
    let mut templates = Vec::new();
    for (k, &it) in schedule.iter().enumerate() {
        let t = lib[order[k]];
        let proposed = it > 0;
        let gain = match it {
            1 => b.gain(45, 80),
            2 => b.gain(20, 35),
            3 => b.gain(8, 18),
            _ => b.gain(20, 60),
        };
        if t.action == ActionType::Add && !proposed {
            continue;
        }
        flaws.push(flaw_from(&b, &t, gain, it.max(1), proposed));
        templates.push(t);
    }
    lib.clear();
    place_flaws(&mut b, &mut t0, &flaws);

    let mut rules: Vec<ScoringRule> = flaws.iter().zip(&templates).map(|(f, t)| flaw_rule(f, t.scored)).collect();
    for (_, _, pattern) in HARMFUL {
        let w = b.gain(10, 20);
        rules.push(rule(Incl, pattern, -w));
    }
    let p0 = round3(b.rng.random_range(0.36..0.48));
    let scoring = calibrate(&rules, &t0, p0);

    let mut playbook = ScriptedPlaybook::new();
    shared_entries(&mut playbook, &b, mode);
    let mut state = t0.clone();
    match scenario {
        Scenario::Planted => {
            for it in 1..=3 {
                let mut props = Vec::new();
                for (f, t) in flaws.iter().zip(&templates).filter(|(f, _)| f.iteration == it) {
                    let c = b.confidence(60, 90);
                    props.push(proposal_for(&b, t, f, c));
                }
                if it <= HARMFUL.len() {
                    let c = b.confidence(40, 55);
                    props.push(harmful_proposal(it - 1, c));
                }
                if props.is_empty() {
                    continue;
                }
                script(&mut playbook, Some(it), &state, &props);
                for f in flaws.iter().filter(|f| f.iteration == it) {
                    apply_fix(&mut state, f);
                }
            }
        }
        Scenario::Neutral => {
            let picks: Vec<String> = state
                .exclusion_criteria
                .iter()
                .filter(|c| NEUTRAL_EXCLUSION.contains(&c.as_str()))
                .take(2)
                .cloned()
                .collect();
            let props: Vec<Proposal> = picks
                .into_iter()
                .map(|c| Proposal {
                    aspect: Excl,
                    action: ActionType::Modify,
                    variants: vec![(format!("{c} as documented at screening"), "GOOD")],
                    locate: Some(c),
                    strategy: "Clarify the wording".into(),
                    confidence: 0.7,
                    category: None,
                })
                .collect();
            script(&mut playbook, Some(1), &state, &props);
        }
        Scenario::EmptyAnalysis | Scenario::Decoy => {}
    }

    let expected_delta_p = flaws.iter().filter(|f| f.proposed).fold(0.0, |acc, f| acc + f.gain);
    SyntheticTrial {
        spec: SyntheticTrialSpec {
            seed,
            nct_id,
            failure_mode: mode,
            scenario,
            planted: flaws,
            decoys: Vec::new(),
            expected_p0: p0,
            expected_delta_p,
        },
        protocol: t0,
        scoring,
        playbook,
    }
}

fn sub_seed(seed: u64, i: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(i as u64 + 1)
}

/// `n` planted trials cycling through the three failure modes. For `n >= 4`
/// one trial has nothing to propose and one proposes only neutral edits.
pub fn planted_corpus(n: usize, seed: u64) -> Vec<SyntheticTrial> {
    (0..n)
        .map(|i| planted_trial(sub_seed(seed, i), trial_id("SYN", seed, i), mode_for(i), scenario_for(i, n)))
        .collect()
}

/// One enrollment trial whose playbook keeps proposing confident deletions
/// of protective exclusions next to less confident real fixes.
///
/// The same proposals are returned at every iteration. Deleting a decoy
/// always lowers the score.
pub fn decoy_trial(seed: u64, nct_id: String) -> SyntheticTrial {
    let mode = FailureMode::PoorEnrollment;
    let mut b = Builder::new(seed);
    let mut t0 = base_protocol(&b, nct_id.clone(), mode);
    let (incl, excl) = b.neutral_lists(3, 2);
    t0.inclusion_criteria = incl;
    t0.exclusion_criteria = excl;

    let lib = enrollment_library();
    let mut modifies: Vec<Template> = lib
        .iter()
        .filter(|t| t.action == ActionType::Modify && t.aspect == Incl)
        .copied()
        .collect();
    modifies.shuffle(&mut b.rng);
    let addition = **lib
        .iter()
        .filter(|t| t.action == ActionType::Add)
        .collect::<Vec<_>>()
        .choose(&mut b.rng)
        .expect("non-empty");
    let mut flaws = Vec::new();
    let mut templates = Vec::new();
    for t in modifies.into_iter().take(2) {
        let g = b.gain(30, 60);
        flaws.push(flaw_from(&b, &t, g, 1, true));
        templates.push(t);
    }
    let g = b.gain(20, 40);
    flaws.push(flaw_from(&b, &addition, g, 1, true));
    templates.push(addition);
    place_flaws(&mut b, &mut t0, &flaws);

    let n_decoys = b.rng.random_range(3..=5);
    let decoys: Vec<String> = NEUTRAL_EXCLUSION
        .iter()
        .filter(|c| !t0.exclusion_criteria.iter().any(|x| x == *c))
        .map(|s| (*s).to_owned())
        .collect::<Vec<_>>()
        .choose_multiple(&mut b.rng, n_decoys)
        .cloned()
        .collect();
    t0.exclusion_criteria.extend(decoys.iter().cloned());

    let mut rules: Vec<ScoringRule> = flaws.iter().zip(&templates).map(|(f, t)| flaw_rule(f, t.scored)).collect();
    for d in &decoys {
        let w = b.gain(5, 15);
        rules.push(rule(Excl, d, w));
    }
    let p0 = round3(b.rng.random_range(0.36..0.48));
    let scoring = calibrate(&rules, &t0, p0);

    let mut props: Vec<Proposal> = Vec::new();
    for d in &decoys {
        let c = b.confidence(85, 95);
        props.push(Proposal {
            aspect: Excl,
            action: ActionType::Delete,
            locate: Some(d.clone()),
            strategy: "Remove a restrictive exclusion".into(),
            confidence: c,
            category: BARRIER,
            variants: Vec::new(),
        });
    }
    for (f, t) in flaws.iter().zip(&templates) {
        let c = if t.action == ActionType::Add { b.confidence(45, 55) } else { b.confidence(55, 65) };
        props.push(proposal_for(&b, t, f, c));
    }
    let mut playbook = ScriptedPlaybook::new();
    shared_entries(&mut playbook, &b, mode);
    script(&mut playbook, None, &t0, &props);

    let expected_delta_p = flaws.iter().fold(0.0, |acc, f| acc + f.gain);
    SyntheticTrial {
        spec: SyntheticTrialSpec {
            seed,
            nct_id,
            failure_mode: mode,
            scenario: Scenario::Decoy,
            planted: flaws,
            decoys,
            expected_p0: p0,
            expected_delta_p,
        },
        protocol: t0,
        scoring,
        playbook,
    }
}

/// `n` decoy trials for memory ablations.
pub fn ablation_corpus(n: usize, seed: u64) -> Vec<SyntheticTrial> {
    (0..n).map(|i| decoy_trial(sub_seed(seed, i), trial_id("ABL", seed, i))).collect()
}

/// Writes each trial's protocol, scoring spec, playbook and ground truth
/// under `dir/<nct_id>/`, plus `dir/manifest.json`.
pub fn write_corpus(dir: &Path, trials: &[SyntheticTrial]) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    let mut manifest = BatchManifest::default();
    for t in trials {
        let id = &t.spec.nct_id;
        let sub = dir.join(id);
        fs::create_dir_all(&sub)?;
        let mut protocol = serde_json::to_string_pretty(&t.protocol.to_value()).map_err(io::Error::other)?;
        protocol.push('\n');
        fs::write(sub.join("protocol.json"), protocol)?;
        fs::write(sub.join("scoring.json"), t.scoring.to_json())?;
        fs::write(sub.join("playbook.json"), t.playbook.to_json())?;
        let mut spec = serde_json::to_string_pretty(&t.spec).map_err(io::Error::other)?;
        spec.push('\n');
        fs::write(sub.join("truth.json"), spec)?;
        manifest.trials.push(ManifestEntry {
            protocol: format!("{id}/protocol.json"),
            failure_mode: Some(t.spec.failure_mode),
            oracle: format!("ref:{id}/scoring.json"),
            provider: format!("scripted:{id}/playbook.json"),
        });
    }
    fs::write(dir.join("manifest.json"), manifest.to_json())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::parse_tradeoffs;
    use crate::oracle::OutcomeOracle;

    #[test]
    fn generation_is_deterministic() {
        let a = planted_corpus(6, 11);
        let b = planted_corpus(6, 11);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.spec, y.spec);
            assert_eq!(x.protocol, y.protocol);
            assert_eq!(x.playbook, y.playbook);
        }
        assert_ne!(planted_corpus(6, 12)[0].protocol, a[0].protocol);
    }

    #[test]
    fn original_scores_at_p0() {
        for t in planted_corpus(20, 3).iter().chain(&ablation_corpus(5, 3)) {
            let o = ReferenceOracle::new(t.scoring.clone()).unwrap();
            let p0 = o.score(&t.protocol).unwrap();
            assert!((p0 - t.spec.expected_p0).abs() < 1e-9, "{}", t.spec.nct_id);
        }
    }

    #[test]
    fn corpus_mix() {
        let c = planted_corpus(20, 5);
        let count = |s: Scenario| c.iter().filter(|t| t.spec.scenario == s).count();
        assert_eq!(count(Scenario::Planted), 18);
        assert_eq!(count(Scenario::EmptyAnalysis), 1);
        assert_eq!(count(Scenario::Neutral), 1);
        assert!(c
            .iter()
            .filter(|t| t.spec.scenario == Scenario::Planted)
            .all(|t| t.spec.expected_delta_p > 0.0));
    }

    #[test]
    fn scripted_tradeoffs_parse() {
        let t = &planted_corpus(3, 9)[1];
        let e = t
            .playbook
            .entries()
            .into_iter()
            .find(|e| e.stage == Stage::Tradeoff && e.iteration == Some(1))
            .unwrap();
        assert!(parse_tradeoffs(&e.completion).unwrap().len() >= 3);
    }
}
