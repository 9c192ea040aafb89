//! The iteration driver, batch runner, cost accounting and corpus reports.

mod batch;
mod config;
mod report;
mod run;

pub use batch::{batch, BatchItem, BatchManifest, BatchOutcome, ManifestEntry};
pub use config::{CostRates, ModeThresholds, RunConfig};
pub use report::{CorpusReport, TrialRow};
pub use run::{finish_run, optimize, run, Backends, IterationTrace, RunOutput};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::Usage;
use crate::explore::SearchStrategy;
use crate::oracle::OracleError;
use crate::protocol::{FailureMode, TrialProtocol};

token_enum! {
    Termination {
        BudgetExhausted => "budget_exhausted",
        SpaceExhausted => "space_exhausted",
        EmptyAnalysis => "empty_analysis",
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("OracleUnavailable: the original protocol could not be scored")]
    OracleUnavailable(#[source] OracleError),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

impl EngineError {
    /// The message followed by every underlying cause.
    pub fn detail(&self) -> String {
        let mut out = self.to_string();
        let mut cur = std::error::Error::source(self);
        while let Some(e) = cur {
            out.push_str(": ");
            out.push_str(&e.to_string());
            cur = e.source();
        }
        out
    }
}

/// Provider and oracle spend for one run or a whole batch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Cost {
    pub provider_calls: u64,
    pub tokens_in: u64,
    pub tokens_out: u64,
    pub oracle_calls: u64,
    /// Estimate only: depends entirely on the configured rates.
    pub estimated_currency: f64,
}

impl Cost {
    pub fn add(&mut self, other: &Cost) {
        self.provider_calls += other.provider_calls;
        self.tokens_in += other.tokens_in;
        self.tokens_out += other.tokens_out;
        self.oracle_calls += other.oracle_calls;
        self.estimated_currency += other.estimated_currency;
    }
}

/// Tokens and oracle calls priced at `rates`.
pub fn account_cost(usage: Usage, oracle_calls: u64, rates: &CostRates) -> Cost {
    Cost {
        provider_calls: usage.calls,
        tokens_in: usage.tokens_in,
        tokens_out: usage.tokens_out,
        oracle_calls,
        estimated_currency: usage.tokens_in as f64 * rates.per_token_in
            + usage.tokens_out as f64 * rates.per_token_out
            + oracle_calls as f64 * rates.per_oracle_call,
    }
}

/// One row of the incumbent trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Best score found this iteration minus the original score.
    pub r_max: Option<f64>,
    /// Best improvement over the original so far.
    pub r_best: f64,
    pub p_best: f64,
    pub improved: bool,
    pub n_targets: usize,
    pub n_augmentations: usize,
    pub n_passed: usize,
    pub n_excluded: usize,
    pub n_options: usize,
    pub space_size: u64,
    pub strategy: Option<SearchStrategy>,
    pub explored: usize,
    pub unscorable: usize,
    pub pool_added: usize,
    pub pool_size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Modifications adopted into the incumbent at one iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdoptedChange {
    pub iteration: usize,
    pub augmentations: Vec<crate::modification::Augmentation>,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationResult {
    pub nct_id: String,
    pub failure_mode: FailureMode,
    pub original: TrialProtocol,
    pub p0: f64,
    pub best: TrialProtocol,
    pub p_star: f64,
    pub delta_p: f64,
    pub adopted: Vec<AdoptedChange>,
    pub trajectory: Vec<IterationRecord>,
    pub termination: Termination,
    pub iterations: usize,
    /// `p_star` reached the operating threshold for the failure mode.
    pub threshold_achieved: bool,
    /// `delta_p` exceeded the configured minimum improvement.
    pub improvement_achieved: bool,
    pub cost: Cost,
    pub config: RunConfig,
}

impl OptimizationResult {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("result serializes");
        s.push('\n');
        s
    }

    pub fn r_best_trajectory(&self) -> Vec<f64> {
        self.trajectory.iter().map(|r| r.r_best).collect()
    }
}
