use serde::{Deserialize, Serialize};

use super::{account_cost, AdoptedChange, EngineError, IterationRecord, OptimizationResult, RunConfig, Termination};
use crate::agents::{
    run_analysis, run_augment, run_validate, AgentContext, AgentError, AgentOutput, AnalysisInput, AugmentInput,
    EvidenceLookup, ModificationTarget, PromptLogEntry, Provider,
};
use crate::explore::{build_groups, explore, RewardRecord, TraceRow};
use crate::memory::{
    adaptive_n, distill, load_memory, transfer, ConfidenceRules, GlobalMemory, LocalMemory, PoolEntry,
    StrategicGuidance, TacticalExemplars, TransferSummary,
};
use crate::modification::{apply_with_map, Augmentation};
use crate::oracle::{OutcomeOracle, ScoreCache};
use crate::protocol::{FailureMode, TrialProtocol};

/// The external services one run talks to.
#[derive(Clone, Copy)]
pub struct Backends<'a> {
    pub provider: &'a dyn Provider,
    pub oracle: &'a dyn OutcomeOracle,
    pub evidence: Option<&'a dyn EvidenceLookup>,
}

/// Audit record of one iteration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationTrace {
    pub iteration: usize,
    pub targets: Vec<ModificationTarget>,
    /// Every generated augmentation with its final validation tier.
    pub augmentations: Vec<Augmentation>,
    pub exploration: Vec<TraceRow>,
    pub rewards: Vec<RewardRecord>,
    pub pool_threshold: Option<f64>,
    pub pool_added: Vec<String>,
    pub pool: Vec<PoolEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent_output: Option<AgentOutput>,
}

/// A finished run with its audit material.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub result: OptimizationResult,
    pub traces: Vec<IterationTrace>,
    pub prompt_log: Vec<PromptLogEntry>,
    pub local: LocalMemory,
    pub transfer: Option<TransferSummary>,
}

/// Runs the iteration loop without touching global memory.
pub fn run(
    t0: &TrialProtocol,
    y: FailureMode,
    global: &GlobalMemory,
    cfg: &RunConfig,
    backends: Backends<'_>,
) -> Result<RunOutput, EngineError> {
    cfg.validate().map_err(EngineError::InvalidConfig)?;
    let oracle = backends.oracle;
    let cache = ScoreCache::new();
    let p0 = cache.cached_score(oracle, t0).map_err(EngineError::OracleUnavailable)?;
    let ctx = AgentContext::new(backends.provider, cfg.retries)
        .with_prompt_log(cfg.log_prompts)
        .with_token_budget(cfg.token_budget);

    let mode_memory = global.mode(y).cloned().unwrap_or_default();
    let rules = if cfg.use_memory {
        mode_memory.confidence_rules(cfg.diversification_penalty, cfg.exploration_bonus)
    } else {
        ConfidenceRules {
            d: cfg.diversification_penalty,
            b: cfg.exploration_bonus,
            ..Default::default()
        }
    };

    let mut incumbent = t0.clone();
    let mut p_best = p0;
    let mut r_best = 0.0_f64;
    let mut local = LocalMemory::default();
    let mut termination = Termination::BudgetExhausted;
    let mut trajectory = Vec::new();
    let mut traces = Vec::new();
    let mut adopted = Vec::new();
    let mut last_pool_added = 0usize;

    for t in 1..=cfg.n_max {
        let (strategic, tactical) = if cfg.use_memory {
            load_memory(global, y, t, &local)
        } else {
            (StrategicGuidance::default(), TacticalExemplars::default())
        };
        let mut record = IterationRecord {
            iteration: t,
            r_max: None,
            r_best,
            p_best,
            improved: false,
            n_targets: 0,
            n_augmentations: 0,
            n_passed: 0,
            n_excluded: 0,
            n_options: 0,
            space_size: 0,
            strategy: None,
            explored: 0,
            unscorable: 0,
            pool_added: 0,
            pool_size: local.pool.len(),
            note: None,
        };

        let analysis = run_analysis(
            &ctx,
            &AnalysisInput {
                protocol: &incumbent,
                mode: y,
                iteration: t,
                guidance: &strategic,
                calibration: &cfg.calibration,
                local: cfg.use_memory.then_some(&local),
                rules: &rules,
            },
        );
        let targets = match analysis {
            Ok(o) => o.targets,
            Err(AgentError::EmptyAnalysis) if t == 1 => {
                log::info!("{}: analysis found nothing to change", t0.nct_id);
                termination = Termination::EmptyAnalysis;
                record.note = Some(AgentError::EmptyAnalysis.to_string());
                trajectory.push(record);
                break;
            }
            Err(AgentError::EmptyAnalysis) => {
                log::info!("{} iteration {t}: no further targets", t0.nct_id);
                record.note = Some(AgentError::EmptyAnalysis.to_string());
                Vec::new()
            }
            Err(e) => {
                log::warn!("{} iteration {t}: {e}", t0.nct_id);
                record.note = Some(e.to_string());
                Vec::new()
            }
        };

        let selected: Vec<ModificationTarget> = targets
            .iter()
            .filter(|x| x.confidence > 0.0)
            .take(cfg.max_targets)
            .cloned()
            .collect();
        record.n_targets = selected.len();
        let with_n: Vec<(ModificationTarget, usize)> = selected
            .iter()
            .map(|x| {
                let n = if cfg.use_memory {
                    adaptive_n(mode_memory.signatures.get(&x.pattern_key()), &cfg.adaptive_n)
                } else {
                    cfg.adaptive_n.base
                };
                (x.clone(), n)
            })
            .collect();
        let augs = if with_n.is_empty() {
            Vec::new()
        } else {
            let input = AugmentInput {
                protocol: &incumbent,
                mode: y,
                iteration: t,
                tactical: &tactical,
            };
            run_augment(&ctx, &input, &with_n).unwrap_or_else(|e| {
                log::warn!("{} iteration {t}: {e}", t0.nct_id);
                Vec::new()
            })
        };
        record.n_augmentations = augs.len();
        let validation = run_validate(&ctx, augs, &incumbent, t, backends.evidence);
        record.n_passed = validation.passed.len();
        record.n_excluded = validation.excluded.len();
        let mut all_augs: Vec<Augmentation> = validation.passed.iter().chain(&validation.excluded).cloned().collect();
        all_augs.sort_by(|a, b| a.id.cmp(&b.id));
        let agent_output = AgentOutput::assemble(&incumbent, &selected, &all_augs, None).ok();

        if validation.passed.is_empty() && last_pool_added == 0 {
            termination = Termination::SpaceExhausted;
            record.note.get_or_insert_with(|| "no new modifications left to explore".into());
            let d = distill(&[], &Default::default(), &validation.excluded);
            local.record(t, Vec::new(), &Default::default(), d, cfg.use_pool);
            record.pool_size = local.pool.len();
            traces.push(IterationTrace {
                iteration: t,
                targets: selected,
                augmentations: all_augs,
                exploration: Vec::new(),
                rewards: Vec::new(),
                pool_threshold: None,
                pool_added: Vec::new(),
                pool: local.pool.entries().cloned().collect(),
                agent_output,
            });
            trajectory.push(record);
            break;
        }

        let pool = cfg.use_pool.then_some(&local.pool);
        let groups = build_groups(&validation.passed, pool, &incumbent);
        record.n_options = groups.iter().map(|g| g.options.len()).sum();
        let ex = explore(&incumbent, p_best, &groups, oracle, &cache, &cfg.search());
        let best_score = ex.best.score.unwrap_or(p_best);
        let r_max = best_score - p0;
        record.r_max = Some(r_max);
        record.space_size = ex.space_size;
        record.strategy = Some(ex.strategy_used);
        record.explored = ex.explored.len();
        record.unscorable = ex.unscorable;

        let d = distill(&ex.rewards, &ex.augmentations, &validation.excluded);
        let threshold = d.threshold;
        let added = local.record(t, ex.rewards.clone(), &ex.augmentations, d, cfg.use_pool);
        record.pool_added = added.len();
        last_pool_added = added.len();

        if r_max > r_best {
            let (derived, maps) = apply_with_map(&incumbent, &ex.best.mods).expect("explored candidates apply cleanly");
            for id in ex.best.mods.ids() {
                local.pool.remove(&id);
            }
            local.remap(&maps);
            adopted.push(AdoptedChange {
                iteration: t,
                augmentations: ex.best.mods.iter().cloned().collect(),
                score: best_score,
            });
            log::info!(
                "{} iteration {t}: incumbent {:.4} -> {:.4} ({} changes)",
                t0.nct_id,
                p_best,
                best_score,
                ex.best.mods.len()
            );
            incumbent = derived;
            p_best = best_score;
            r_best = r_max;
            record.improved = true;
        }
        record.r_best = r_best;
        record.p_best = p_best;
        record.pool_size = local.pool.len();
        traces.push(IterationTrace {
            iteration: t,
            targets: selected,
            augmentations: all_augs,
            exploration: ex.trace,
            rewards: ex.rewards,
            pool_threshold: threshold,
            pool_added: added,
            pool: local.pool.entries().cloned().collect(),
            agent_output,
        });
        trajectory.push(record);
    }

    let cost = account_cost(ctx.usage(), cache.misses(), &cfg.rates);
    let delta_p = p_best - p0;
    let result = OptimizationResult {
        nct_id: t0.nct_id.clone(),
        failure_mode: y,
        original: t0.clone(),
        p0,
        best: incumbent,
        p_star: p_best,
        delta_p,
        adopted,
        iterations: trajectory.len(),
        trajectory,
        termination,
        threshold_achieved: p_best >= cfg.thresholds.for_mode(y),
        improvement_achieved: delta_p > cfg.min_improvement,
        cost,
        config: cfg.clone(),
    };
    Ok(RunOutput {
        result,
        traces,
        prompt_log: ctx.take_log(),
        local,
        transfer: None,
    })
}

/// Transfers a finished run into global memory. Summary calls are added
/// to the run's cost and prompt log.
pub fn finish_run(out: &mut RunOutput, global: &mut GlobalMemory, provider: Option<&dyn Provider>) {
    let cfg = &out.result.config;
    if !cfg.use_memory {
        return;
    }
    let ctx = provider
        .filter(|_| cfg.summarize)
        .map(|p| AgentContext::new(p, cfg.retries).with_prompt_log(cfg.log_prompts));
    let summary = transfer(&out.local, global, out.result.failure_mode, ctx.as_ref());
    if let Some(ctx) = ctx {
        let extra = account_cost(ctx.usage(), 0, &cfg.rates);
        out.result.cost.add(&extra);
        out.prompt_log.extend(ctx.take_log());
    }
    out.transfer = Some(summary);
}

/// [`run`] followed by the transfer into `global`.
pub fn optimize(
    t0: &TrialProtocol,
    y: FailureMode,
    global: &mut GlobalMemory,
    cfg: &RunConfig,
    backends: Backends<'_>,
) -> Result<RunOutput, EngineError> {
    let mut out = run(t0, y, global, cfg, backends)?;
    finish_run(&mut out, global, Some(backends.provider));
    Ok(out)
}
