//! Analysis, augmentation and validation stages over a text-completion
//! provider, plus the tagged-output parser and replay providers.

pub mod analysis;
pub mod augment;
pub mod http;
pub mod output;
pub mod prompts;
pub mod provider;
pub mod schema;
pub mod scripted;
pub mod tagged;
pub mod validate;

pub use analysis::{run_analysis, AnalysisContext, AnalysisInput, AnalysisOutcome};
pub use augment::{run_augment, AugmentInput};
pub use http::HttpProvider;
pub use output::{AgentOutput, AspectRecord};
pub use provider::{
    AgentContext, Completion, PromptLogEntry, Provider, ProviderError, ProviderRequest, RecordingProvider,
    Stage, StageError, Usage,
};
pub use schema::{
    parse_augmentations, parse_classifications, parse_prioritization, parse_tagged, parse_tradeoffs,
    AdverseEventProfile, AugmentationVariant, ClassificationScores, DesignPivots, MechanismAnalysis, Parsed,
    PriorityOverride, Schema, Toxicity, TradeoffItem, Verdict,
};
pub use scripted::{PlaybookEntry, ScriptedPlaybook, ScriptedProvider};
pub use tagged::ParseError;
pub use validate::{run_validate, EvidenceLookup, ValidationOutcome};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::modification::{ActionType, Category, SlotKey};
use crate::protocol::AspectRef;

/// Confidence given to an enrichment criterion proposed by the mechanism check.
pub const DEFAULT_ENRICHMENT_CONFIDENCE: f64 = 0.5;

token_enum! {
    ImpactLevel {
        Major => "MAJOR",
        Minor => "MINOR",
        NotRelated => "NOT_RELATED",
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgentError {
    #[error("provider failure: {0}")]
    ProviderFailure(String),
    #[error("analysis produced no modification targets")]
    EmptyAnalysis,
    #[error("no target produced a usable variant")]
    AllTargetsEmpty,
}

/// A slot the analysis stage wants changed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModificationTarget {
    pub target: AspectRef,
    pub action: ActionType,
    pub strategy: String,
    /// Confidence after calibration, overrides and memory adjustment.
    pub confidence: f64,
    /// Confidence before memory adjustment.
    pub raw_confidence: f64,
    pub impact: ImpactLevel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<Category>,
    pub slot: SlotKey,
}

impl ModificationTarget {
    pub fn new(
        target: AspectRef,
        action: ActionType,
        strategy: String,
        confidence: f64,
        impact: ImpactLevel,
        category: Option<Category>,
    ) -> Self {
        let tag = SlotKey::add_tag(target.aspect, &strategy);
        let slot = SlotKey::for_target(&target, action, &tag);
        let c = confidence.clamp(0.0, 1.0);
        Self {
            target,
            action,
            strategy,
            confidence: c,
            raw_confidence: c,
            impact,
            category,
            slot,
        }
    }

    /// Key for global signatures, matching [`crate::Augmentation::pattern_key`].
    pub fn pattern_key(&self) -> String {
        match self.category {
            Some(c) => c.as_str().to_owned(),
            None => self.target.aspect.as_str().to_owned(),
        }
    }
}

/// Maps raw model confidences to calibrated ones.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Calibration {
    #[default]
    Identity,
    /// Piecewise-linear through sorted `(raw, calibrated)` knots; flat outside.
    Piecewise { knots: Vec<(f64, f64)> },
}

impl Calibration {
    pub fn apply(&self, x: f64) -> f64 {
        let y = match self {
            Calibration::Identity => x,
            Calibration::Piecewise { knots } => match knots.as_slice() {
                [] => x,
                [(_, y)] => *y,
                ks => {
                    if x <= ks[0].0 {
                        ks[0].1
                    } else if x >= ks[ks.len() - 1].0 {
                        ks[ks.len() - 1].1
                    } else {
                        let w = ks.windows(2).find(|w| x <= w[1].0).expect("x inside knot range");
                        let (x0, y0) = w[0];
                        let (x1, y1) = w[1];
                        if x1 == x0 {
                            y1
                        } else {
                            y0 + (y1 - y0) * (x - x0) / (x1 - x0)
                        }
                    }
                }
            },
        };
        y.clamp(0.0, 1.0)
    }
}
