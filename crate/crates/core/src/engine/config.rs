use serde::{Deserialize, Serialize};

use crate::agents::Calibration;
use crate::explore::SearchConfig;
use crate::memory::AdaptiveN;
use crate::protocol::FailureMode;

/// Success-probability level counted as reaching the operating threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeThresholds {
    pub enrollment: f64,
    pub safety: f64,
    pub efficacy: f64,
}

impl Default for ModeThresholds {
    fn default() -> Self {
        Self {
            enrollment: 0.6,
            safety: 0.9,
            efficacy: 0.85,
        }
    }
}

impl ModeThresholds {
    pub fn for_mode(&self, y: FailureMode) -> f64 {
        match y {
            FailureMode::PoorEnrollment => self.enrollment,
            FailureMode::SafetyAdverseEffect => self.safety,
            FailureMode::LackOfEfficacy => self.efficacy,
        }
    }
}

/// Per-unit prices used for the cost estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostRates {
    pub per_token_in: f64,
    pub per_token_out: f64,
    pub per_oracle_call: f64,
}

impl Default for CostRates {
    fn default() -> Self {
        Self {
            per_token_in: 1.5e-7,
            per_token_out: 6.0e-7,
            per_oracle_call: 0.0,
        }
    }
}

/// Everything that controls one run. Loadable from TOML; missing keys
/// take their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub n_max: usize,
    pub beam_width: usize,
    pub space_threshold: u64,
    /// Minimum Δp counted as a meaningful improvement.
    pub min_improvement: f64,
    /// Targets augmented per iteration.
    pub max_targets: usize,
    pub adaptive_n: AdaptiveN,
    pub diversification_penalty: f64,
    pub exploration_bonus: f64,
    pub retries: u32,
    pub token_budget: Option<u64>,
    pub calibration: Calibration,
    pub thresholds: ModeThresholds,
    pub rates: CostRates,
    pub use_memory: bool,
    pub use_pool: bool,
    /// Word transferred guidance through the provider.
    pub summarize: bool,
    pub log_prompts: bool,
    pub seed: u64,
    /// Trials run concurrently by the batch runner.
    pub parallelism: usize,
    pub oracle_timeout_secs: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            n_max: 5,
            beam_width: 8,
            space_threshold: 1000,
            min_improvement: 0.03,
            max_targets: 4,
            adaptive_n: AdaptiveN::default(),
            diversification_penalty: 0.2,
            exploration_bonus: 0.1,
            retries: 2,
            token_budget: None,
            calibration: Calibration::Identity,
            thresholds: ModeThresholds::default(),
            rates: CostRates::default(),
            use_memory: true,
            use_pool: true,
            summarize: true,
            log_prompts: false,
            seed: 0,
            parallelism: 1,
            oracle_timeout_secs: 30,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        let cfg: Self = toml::from_str(text).map_err(|e| e.to_string())?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), String> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(format!("{name} must lie in [0, 1], got {v}"))
            }
        };
        if self.n_max < 1 {
            return Err("n_max must be at least 1".into());
        }
        if self.beam_width < 1 {
            return Err("beam_width must be at least 1".into());
        }
        if self.max_targets < 1 {
            return Err("max_targets must be at least 1".into());
        }
        if self.min_improvement.is_nan() || self.min_improvement < 0.0 {
            return Err("min_improvement must be non-negative".into());
        }
        if self.adaptive_n.base < 1 || self.adaptive_n.n_max < 1 {
            return Err("adaptive_n.base and adaptive_n.n_max must be at least 1".into());
        }
        unit("diversification_penalty", self.diversification_penalty)?;
        unit("exploration_bonus", self.exploration_bonus)?;
        unit("thresholds.enrollment", self.thresholds.enrollment)?;
        unit("thresholds.safety", self.thresholds.safety)?;
        unit("thresholds.efficacy", self.thresholds.efficacy)?;
        Ok(())
    }

    pub fn search(&self) -> SearchConfig {
        SearchConfig {
            space_threshold: self.space_threshold,
            beam_width: self.beam_width,
        }
    }
}
