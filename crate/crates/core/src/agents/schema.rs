//! Typed views over the tag grammars emitted by each stage.

use serde::{Deserialize, Serialize};

use super::tagged::{find_all, find_block, Block, ParseError};
use super::ImpactLevel;
use crate::modification::{ActionType, Category, ValidationTier};
use crate::protocol::{Aspect, AspectRef};

/// Grammars understood by [`parse_tagged`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schema {
    Classification,
    MechanismAnalysis,
    Tradeoff,
    Augmentations,
    DosageAugmentations,
    DesignPivots,
    AdverseEventProfile,
    Prioritization,
    Verdict,
}

/// Result of [`parse_tagged`]: the first well-formed instance of a schema.
#[derive(Debug, Clone, PartialEq)]
pub enum Parsed {
    Classification(ClassificationScores),
    MechanismAnalysis(MechanismAnalysis),
    Tradeoff(Vec<TradeoffItem>),
    Augmentations(Vec<AugmentationVariant>),
    DesignPivots(DesignPivots),
    AdverseEventProfile(AdverseEventProfile),
    Prioritization(Vec<PriorityOverride>),
    Verdict(Verdict),
}

pub fn parse_tagged(text: &str, schema: Schema) -> Result<Parsed, ParseError> {
    Ok(match schema {
        Schema::Classification => {
            let b = find_block(text, "classification")?;
            Parsed::Classification(ClassificationScores::from_block(&b)?)
        }
        Schema::MechanismAnalysis => Parsed::MechanismAnalysis(MechanismAnalysis::parse(text)?),
        Schema::Tradeoff => Parsed::Tradeoff(parse_tradeoffs(text)?),
        Schema::Augmentations | Schema::DosageAugmentations => {
            Parsed::Augmentations(parse_augmentations(text)?)
        }
        Schema::DesignPivots => Parsed::DesignPivots(DesignPivots::parse(text)?),
        Schema::AdverseEventProfile => Parsed::AdverseEventProfile(AdverseEventProfile::parse(text)?),
        Schema::Prioritization => Parsed::Prioritization(parse_prioritization(text)?),
        Schema::Verdict => Parsed::Verdict(Verdict::parse(text)?),
    })
}

fn aspect_attr(b: &Block<'_>) -> Result<Option<AspectRef>, ParseError> {
    let Some(name) = b.attr("aspect_name") else {
        return Ok(None);
    };
    let aspect: Aspect = name.parse().map_err(|_| ParseError::BadValue {
        tag: format!("{} aspect_name", b.tag),
        text: name.to_owned(),
    })?;
    let index = match b.attr("index").map(str::trim) {
        None | Some("") | Some("None") | Some("null") => None,
        Some(raw) => Some(raw.parse::<usize>().map_err(|_| ParseError::BadValue {
            tag: format!("{} index", b.tag),
            text: raw.to_owned(),
        })?),
    };
    let index = if aspect.is_list() { index } else { None };
    Ok(Some(AspectRef { aspect, index }))
}

fn token<T: std::str::FromStr>(tag: &str, text: &str) -> Result<T, ParseError> {
    text.trim().parse().map_err(|_| ParseError::BadValue {
        tag: tag.to_owned(),
        text: text.to_owned(),
    })
}

/// Per-category scores for one eligibility criterion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationScores {
    pub target: Option<AspectRef>,
    pub participation_barrier: Option<f64>,
    pub safety_exclusion: Option<f64>,
    pub selection_criterion: Option<f64>,
    pub enrichment_criterion: Option<f64>,
    /// Argmax of the scores present, falling back to the declared category.
    pub primary_category: Category,
    pub declared_primary: Option<Category>,
    pub reasoning: String,
}

impl ClassificationScores {
    pub fn scores(&self) -> [(Category, Option<f64>); 4] {
        [
            (Category::ParticipationBarrier, self.participation_barrier),
            (Category::SafetyExclusion, self.safety_exclusion),
            (Category::SelectionCriterion, self.selection_criterion),
            (Category::EnrichmentCriterion, self.enrichment_criterion),
        ]
    }

    /// Highest score wins; ties resolve to the earlier category.
    pub fn argmax(&self) -> Option<Category> {
        let mut best: Option<(Category, f64)> = None;
        for (c, s) in self.scores() {
            if let Some(s) = s {
                if best.is_none_or(|(_, b)| s > b) {
                    best = Some((c, s));
                }
            }
        }
        best.map(|(c, _)| c)
    }

    pub fn from_block(b: &Block<'_>) -> Result<Self, ParseError> {
        let declared = b
            .child_text("primary_category")?
            .map(|t| token::<Category>("primary_category", &t))
            .transpose()?;
        let mut out = Self {
            target: aspect_attr(b)?,
            participation_barrier: b.unit("participation_barrier_score")?,
            safety_exclusion: b.unit("safety_exclusion_score")?,
            selection_criterion: b.unit("selection_criterion_score")?,
            enrichment_criterion: b.unit("enrichment_criterion_score")?,
            primary_category: Category::ParticipationBarrier,
            declared_primary: declared,
            reasoning: b.child_text("reasoning")?.unwrap_or_default(),
        };
        out.primary_category = out.argmax().or(declared).ok_or_else(|| ParseError::MissingField {
            block: "classification".into(),
            field: "primary_category".into(),
        })?;
        Ok(out)
    }
}

/// Every `<classification>` block in a completion. Zero blocks is legal.
pub fn parse_classifications(text: &str) -> Result<Vec<ClassificationScores>, ParseError> {
    find_all(text, "classification")?
        .iter()
        .map(ClassificationScores::from_block)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MechanismAnalysis {
    pub analysis: String,
    pub missing_enrichment: Option<String>,
}

impl MechanismAnalysis {
    pub fn parse(text: &str) -> Result<Self, ParseError> {
        let analysis = find_block(text, "mechanism_analysis")?.text();
        let missing = match find_block(text, "missing_enrichment_criterion") {
            Ok(b) => Some(b.text()).filter(|t| !t.is_empty() && !t.eq_ignore_ascii_case("none")),
            Err(ParseError::NoBlockFound(_)) => None,
            Err(e) => return Err(e),
        };
        Ok(Self {
            analysis,
            missing_enrichment: missing,
        })
    }

    /// Which list the proposed enrichment criterion belongs to.
    pub fn enrichment_aspect(text: &str) -> Aspect {
        if text.trim_start().to_ascii_lowercase().starts_with("add exclusion") {
            Aspect::ExclusionCriteria
        } else {
            Aspect::InclusionCriteria
        }
    }
}

token_enum! {
    Recommendation {
        Keep => "KEEP",
        Modify => "MODIFY",
        Delete => "DELETE",
        Add => "ADD",
    }
}

impl Recommendation {
    pub fn action(self) -> Option<ActionType> {
        match self {
            Recommendation::Keep => None,
            Recommendation::Modify => Some(ActionType::Modify),
            Recommendation::Delete => Some(ActionType::Delete),
            Recommendation::Add => Some(ActionType::Add),
        }
    }
}

/// One trade-off judgement about an aspect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffItem {
    pub target: AspectRef,
    pub recommendation: Recommendation,
    pub confidence: f64,
    pub efficacy_signal: Option<String>,
    pub enrollment: Option<String>,
    pub safety: Option<String>,
    pub mechanism_alignment: Option<String>,
    pub reasoning: String,
    pub strategy: Option<String>,
    pub impact: Option<ImpactLevel>,
    pub category: Option<Category>,
}

impl TradeoffItem {
    fn from_block(b: &Block<'_>, target: AspectRef) -> Result<Self, ParseError> {
        let recommendation = token("recommendation", &b.required_text("recommendation")?)?;
        let confidence = b.unit("confidence")?.ok_or_else(|| ParseError::MissingField {
            block: b.tag.to_owned(),
            field: "confidence".into(),
        })?;
        Ok(Self {
            target,
            recommendation,
            confidence,
            efficacy_signal: b.child_text("efficacy_signal")?,
            enrollment: b.child_text("enrollment")?,
            safety: b.child_text("safety")?,
            mechanism_alignment: b.child_text("mechanism_alignment")?,
            reasoning: b.child_text("reasoning")?.unwrap_or_default(),
            strategy: b.child_text("strategy")?,
            impact: b
                .child_text("impact_level")?
                .map(|t| token("impact_level", &t))
                .transpose()?,
            category: b
                .child_text("category")?
                .map(|t| token("category", &t))
                .transpose()?,
        })
    }
}

/// Collects `<tradeoff aspect_name=.. index=..>`, `<dosage_tradeoff>` and
/// `<outcome_tradeoff>` blocks. At least one block, or an empty
/// `<tradeoffs>` wrapper, must be present.
pub fn parse_tradeoffs(text: &str) -> Result<Vec<TradeoffItem>, ParseError> {
    let mut items = Vec::new();
    for b in find_all(text, "tradeoff")? {
        let target = aspect_attr(&b)?.ok_or_else(|| ParseError::MissingField {
            block: "tradeoff".into(),
            field: "aspect_name".into(),
        })?;
        items.push(TradeoffItem::from_block(&b, target)?);
    }
    for b in find_all(text, "dosage_tradeoff")? {
        items.push(TradeoffItem::from_block(&b, AspectRef::whole(Aspect::Dosage))?);
    }
    for b in find_all(text, "outcome_tradeoff")? {
        items.push(TradeoffItem::from_block(&b, AspectRef::whole(Aspect::TargetPrimaryOutcome))?);
    }
    if items.is_empty() {
        find_block(text, "tradeoffs")?;
    }
    Ok(items)
}

/// One generated value, with the dosage grammar's rationale when present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationVariant {
    pub value: String,
    pub rationale: Option<String>,
}

pub fn parse_augmentations(text: &str) -> Result<Vec<AugmentationVariant>, ParseError> {
    let outer = find_block(text, "augmentations")?;
    let mut out = Vec::new();
    for b in outer.children("augmentation")? {
        let (value, rationale) = match b.child_text("dosage_modification")? {
            Some(v) => (v, b.child_text("rationale")?),
            None => match b.child_text("value")? {
                Some(v) => (v, b.child_text("rationale")?),
                None => (b.text(), None),
            },
        };
        if !value.is_empty() {
            out.push(AugmentationVariant { value, rationale });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DesignPivots {
    pub trial_type: Option<String>,
    pub endpoint_family: Option<String>,
    pub dose_regimen_direction: Option<String>,
    pub route_change: Option<String>,
    pub proposed_route: Option<String>,
    pub sample_size_direction: Option<String>,
    pub design_structure: Option<String>,
    pub proposed_primary_outcome: Option<String>,
    pub summary: Option<String>,
}

impl DesignPivots {
    pub fn parse(text: &str) -> Result<Self, ParseError> {
        let b = find_block(text, "design_pivots")?;
        Ok(Self {
            trial_type: b.child_text("trial_type")?,
            endpoint_family: b.child_text("endpoint_family")?,
            dose_regimen_direction: b.child_text("dose_regimen_direction")?,
            route_change: b.child_text("route_change")?,
            proposed_route: b.child_text("proposed_route")?,
            sample_size_direction: b.child_text("sample_size_direction")?,
            design_structure: b.child_text("design_structure")?,
            proposed_primary_outcome: b.child_text("proposed_primary_outcome")?,
            summary: b.child_text("summary")?,
        })
    }

    pub fn is_empty(&self) -> bool {
        self == &Self::default()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Toxicity {
    pub event: Option<String>,
    pub grade: Option<String>,
    pub incidence: Option<String>,
    pub organ_system: Option<String>,
    pub priority: Option<String>,
    pub dose_dependent: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AdverseEventProfile {
    pub primary_toxicity: Option<Toxicity>,
    pub mechanism_consistency: Option<String>,
    pub root_cause_hypothesis: Option<String>,
    pub critical_gaps: Vec<String>,
}

impl AdverseEventProfile {
    pub fn parse(text: &str) -> Result<Self, ParseError> {
        let b = find_block(text, "adverse_event_profile")?;
        let primary_toxicity = match b.child("primary_toxicity")? {
            Some(t) => Some(Toxicity {
                event: t.child_text("event")?,
                grade: t.child_text("grade")?,
                incidence: t.child_text("incidence")?,
                organ_system: t.child_text("organ_system")?,
                priority: t.child_text("priority")?,
                dose_dependent: t.child_text("dose_dependent")?,
            }),
            None => None,
        };
        let critical_gaps = match b.child("critical_gaps")? {
            Some(g) => g.children("gap")?.iter().map(Block::text).collect(),
            None => Vec::new(),
        };
        Ok(Self {
            primary_toxicity,
            mechanism_consistency: b.child_text("mechanism_consistency")?,
            root_cause_hypothesis: b.child_text("root_cause_hypothesis")?,
            critical_gaps,
        })
    }
}

/// Confidence override emitted by the prioritisation stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorityOverride {
    pub target: AspectRef,
    pub action: Option<ActionType>,
    pub confidence: f64,
}

pub fn parse_prioritization(text: &str) -> Result<Vec<PriorityOverride>, ParseError> {
    let outer = find_block(text, "prioritization")?;
    let mut out = Vec::new();
    for b in outer.children("target")? {
        let target = aspect_attr(&b)?.ok_or_else(|| ParseError::MissingField {
            block: "target".into(),
            field: "aspect_name".into(),
        })?;
        let action = b.attr("action").map(|a| token("target action", a)).transpose()?;
        let confidence = super::tagged::parse_unit("target", &b.text())?;
        out.push(PriorityOverride {
            target,
            action,
            confidence,
        });
    }
    Ok(out)
}

/// Judge output for one augmentation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub tier: ValidationTier,
    pub reason: String,
}

impl Verdict {
    pub fn parse(text: &str) -> Result<Self, ParseError> {
        let b = find_block(text, "verdict")?;
        let raw = b.required_text("tier")?;
        let tier: ValidationTier = token("tier", &raw)?;
        if tier == ValidationTier::Pending {
            return Err(ParseError::BadValue {
                tag: "tier".into(),
                text: raw,
            });
        }
        Ok(Self {
            tier,
            reason: b.child_text("reason")?.unwrap_or_default(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_ties_follow_enum_order() {
        let text = "<classification><safety_exclusion_score>0.5</safety_exclusion_score>\
            <enrichment_criterion_score>0.5</enrichment_criterion_score>\
            <primary_category>ENRICHMENT_CRITERION</primary_category></classification>";
        let c = ClassificationScores::from_block(&find_block(text, "classification").unwrap()).unwrap();
        assert_eq!(c.primary_category, Category::SafetyExclusion);
        assert_eq!(c.declared_primary, Some(Category::EnrichmentCriterion));
    }

    #[test]
    fn score_out_of_range() {
        let text = "<classification><participation_barrier_score>1.4</participation_barrier_score></classification>";
        assert!(matches!(
            parse_tagged(text, Schema::Classification),
            Err(ParseError::MalformedNumber { .. })
        ));
    }

    #[test]
    fn empty_augmentations() {
        assert_eq!(
            parse_tagged("<augmentations></augmentations>", Schema::Augmentations),
            Ok(Parsed::Augmentations(vec![]))
        );
    }

    #[test]
    fn unclosed_augmentation() {
        let text = "<augmentations><augmentation>half";
        assert!(matches!(
            parse_tagged(text, Schema::Augmentations),
            Err(ParseError::TruncatedBlock(_))
        ));
        let text = "<augmentations><augmentation>half</augmentations>";
        assert_eq!(
            parse_tagged(text, Schema::Augmentations),
            Err(ParseError::TruncatedBlock("augmentation".into()))
        );
    }

    #[test]
    fn tradeoff_blocks() {
        let text = r#"<tradeoffs>
            <tradeoff aspect_name="eligibility/inclusion_criteria" index="2">
              <recommendation>DELETE</recommendation><confidence>0.9</confidence>
              <strategy>remove the waiting rule</strategy><category>PARTICIPATION_BARRIER</category>
            </tradeoff>
            <dosage_tradeoff><recommendation>KEEP</recommendation><confidence>0.3</confidence></dosage_tradeoff>
            </tradeoffs>"#;
        let items = parse_tradeoffs(text).unwrap();
        assert_eq!(items.len(), 2);
        assert_eq!(items[0].target, AspectRef::list_item(Aspect::InclusionCriteria, 2));
        assert_eq!(items[0].recommendation, Recommendation::Delete);
        assert_eq!(items[1].target, AspectRef::whole(Aspect::Dosage));
        assert_eq!(parse_tradeoffs("<tradeoffs></tradeoffs>").unwrap(), vec![]);
        assert!(parse_tradeoffs("no blocks").is_err());
    }

    #[test]
    fn verdict_rejects_pending() {
        assert!(Verdict::parse("<verdict><tier>PENDING</tier></verdict>").is_err());
        assert_eq!(
            Verdict::parse("<verdict><tier>banned</tier><reason>raises dose</reason></verdict>").unwrap().tier,
            ValidationTier::Banned
        );
    }

    #[test]
    fn prioritization_overrides() {
        let text = r#"<prioritization><target aspect_name="dosage" action="MODIFY">0.7</target></prioritization>"#;
        let p = parse_prioritization(text).unwrap();
        assert_eq!(p[0].target, AspectRef::whole(Aspect::Dosage));
        assert_eq!(p[0].action, Some(ActionType::Modify));
        assert_eq!(p[0].confidence, 0.7);
    }
}
