//! The per-iteration agent output document: trial data plus one record per
//! analysed aspect with its generated values.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{AgentError, ImpactLevel, ModificationTarget};
use crate::modification::{ActionType, Augmentation};
use crate::protocol::{Aspect, ProtocolError, TrialProtocol};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AspectAnalysis {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<String>,
    #[serde(default)]
    pub failure_analysis: String,
    pub impact_level: ImpactLevel,
    pub action_type: ActionType,
    #[serde(default)]
    pub strategy: String,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AspectAugment {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<String>,
    pub augment_val_li: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AspectRecord {
    pub aspect_name: Aspect,
    pub aspect_index: Option<usize>,
    pub original_value: String,
    pub aspect_type: String,
    pub analysis: AspectAnalysis,
    pub augment: AspectAugment,
}

/// Structured output of one pass of the agent pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentOutput {
    pub trial_data: TrialProtocol,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trial_context: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub react_reasoning: Option<Value>,
    pub aspect_li: Vec<AspectRecord>,
}

impl AgentOutput {
    /// Parses and checks aspect records against the embedded trial data.
    pub fn from_json(text: &str) -> Result<Self, ProtocolError> {
        let out: Self =
            serde_json::from_str(text).map_err(|e| ProtocolError::MalformedDocument(e.to_string()))?;
        for (i, r) in out.aspect_li.iter().enumerate() {
            let bad = |why: &str| Err(ProtocolError::MalformedDocument(format!("aspect_li[{i}]: {why}")));
            let expected_type = if r.aspect_name.is_list() { "list" } else { "string" };
            if r.aspect_type != expected_type {
                return bad("aspect_type does not match aspect_name");
            }
            if !(0.0..=1.0).contains(&r.analysis.confidence) {
                return bad("confidence outside [0, 1]");
            }
            match (r.aspect_name.is_list(), r.analysis.action_type, r.aspect_index) {
                (true, ActionType::Add, Some(_)) => return bad("ADD records carry no index"),
                (true, ActionType::Modify | ActionType::Delete, None) => return bad("list record needs an index"),
                (false, _, Some(_)) => return bad("string aspects carry no index"),
                (true, _, Some(idx)) => {
                    let len = out.trial_data.list(r.aspect_name).map_or(0, Vec::len);
                    if idx >= len {
                        return bad("aspect_index out of range");
                    }
                }
                _ => {}
            }
        }
        Ok(out)
    }

    /// Builds the document for one iteration from its targets and variants.
    pub fn assemble(
        protocol: &TrialProtocol,
        targets: &[ModificationTarget],
        augs: &[Augmentation],
        react_reasoning: Option<Value>,
    ) -> Result<Self, AgentError> {
        let aspect_li = targets
            .iter()
            .map(|t| {
                let values = augs
                    .iter()
                    .filter(|a| a.slot == t.slot && a.action == t.action)
                    .filter_map(|a| a.value.clone())
                    .collect();
                AspectRecord {
                    aspect_name: t.target.aspect,
                    aspect_index: t.target.index,
                    original_value: match t.action {
                        ActionType::Add => "N/A".into(),
                        _ => protocol.resolve(&t.target).unwrap_or_default().to_owned(),
                    },
                    aspect_type: if t.target.aspect.is_list() { "list" } else { "string" }.into(),
                    analysis: AspectAnalysis {
                        timestamp: None,
                        failure_analysis: String::new(),
                        impact_level: t.impact,
                        action_type: t.action,
                        strategy: t.strategy.clone(),
                        confidence: t.confidence,
                    },
                    augment: AspectAugment {
                        timestamp: None,
                        augment_val_li: values,
                    },
                }
            })
            .collect();
        Ok(Self {
            trial_data: protocol.clone(),
            trial_context: None,
            react_reasoning,
            aspect_li,
        })
    }
}
