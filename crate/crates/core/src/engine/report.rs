use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{Cost, OptimizationResult, Termination};
use crate::memory::nearest_rank;
use crate::protocol::FailureMode;

/// One trial of a corpus report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub nct_id: String,
    pub failure_mode: Option<FailureMode>,
    pub p0: Option<f64>,
    pub p_star: Option<f64>,
    pub delta_p: Option<f64>,
    pub iterations: usize,
    pub termination: Option<Termination>,
    pub threshold_achieved: bool,
    pub improvement_achieved: bool,
    /// Increase of the best score at each iteration, padded with zeros.
    pub gains: Vec<f64>,
    pub cost: Cost,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl TrialRow {
    pub fn from_result(r: &OptimizationResult, n_iterations: usize) -> Self {
        let mut gains = vec![0.0; n_iterations];
        let mut prev = 0.0;
        for (i, rec) in r.trajectory.iter().enumerate().take(n_iterations) {
            gains[i] = rec.r_best - prev;
            prev = rec.r_best;
        }
        Self {
            nct_id: r.nct_id.clone(),
            failure_mode: Some(r.failure_mode),
            p0: Some(r.p0),
            p_star: Some(r.p_star),
            delta_p: Some(r.delta_p),
            iterations: r.iterations,
            termination: Some(r.termination),
            threshold_achieved: r.threshold_achieved,
            improvement_achieved: r.improvement_achieved,
            gains,
            cost: r.cost,
            error: None,
        }
    }

    pub fn failed(nct_id: impl Into<String>, error: impl Into<String>, n_iterations: usize) -> Self {
        Self {
            nct_id: nct_id.into(),
            failure_mode: None,
            p0: None,
            p_star: None,
            delta_p: None,
            iterations: 0,
            termination: None,
            threshold_achieved: false,
            improvement_achieved: false,
            gains: vec![0.0; n_iterations],
            cost: Cost::default(),
            error: Some(error.into()),
        }
    }
}

/// Aggregate view of a batch of runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusReport {
    pub n_trials: usize,
    pub n_completed: usize,
    pub n_failed: usize,
    /// Fraction of completed trials with Δp > 0.
    pub positive_rate: f64,
    pub n_positive: usize,
    pub mean_delta_p: f64,
    pub p25_delta_p: Option<f64>,
    pub p75_delta_p: Option<f64>,
    pub threshold_rate: f64,
    pub improvement_rate: f64,
    /// Mean per-iteration gain over completed trials.
    pub gain_curve: Vec<f64>,
    /// Mean best improvement after each iteration.
    pub cumulative_curve: Vec<f64>,
    pub cost: Cost,
    pub trials: Vec<TrialRow>,
}

impl CorpusReport {
    pub fn from_rows(trials: Vec<TrialRow>, n_iterations: usize) -> Self {
        let done: Vec<&TrialRow> = trials.iter().filter(|r| r.error.is_none()).collect();
        let n = done.len();
        let frac = |k: usize| if n == 0 { 0.0 } else { k as f64 / n as f64 };
        let deltas: Vec<f64> = done.iter().filter_map(|r| r.delta_p).collect();
        let n_positive = deltas.iter().filter(|&&d| d > 0.0).count();
        let mean_delta_p = if n == 0 { 0.0 } else { deltas.iter().sum::<f64>() / n as f64 };
        let mut gain_curve = vec![0.0; n_iterations];
        for r in &done {
            for (i, g) in r.gains.iter().enumerate().take(n_iterations) {
                gain_curve[i] += g;
            }
        }
        if n > 0 {
            for g in &mut gain_curve {
                *g /= n as f64;
            }
        }
        let cumulative_curve = gain_curve
            .iter()
            .scan(0.0, |acc, g| {
                *acc += g;
                Some(*acc)
            })
            .collect();
        let mut cost = Cost::default();
        for r in &trials {
            cost.add(&r.cost);
        }
        Self {
            n_trials: trials.len(),
            n_completed: n,
            n_failed: trials.len() - n,
            positive_rate: frac(n_positive),
            n_positive,
            mean_delta_p,
            p25_delta_p: nearest_rank(&deltas, 0.25),
            p75_delta_p: nearest_rank(&deltas, 0.75),
            threshold_rate: frac(done.iter().filter(|r| r.threshold_achieved).count()),
            improvement_rate: frac(done.iter().filter(|r| r.improvement_achieved).count()),
            gain_curve,
            cumulative_curve,
            cost,
            trials,
        }
    }

    pub fn from_results(results: &[OptimizationResult], n_iterations: usize) -> Self {
        Self::from_rows(
            results.iter().map(|r| TrialRow::from_result(r, n_iterations)).collect(),
            n_iterations,
        )
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Per-iteration curve as CSV.
    pub fn curve_csv(&self) -> String {
        let mut out = String::from("iteration,mean_gain,mean_cumulative_gain\n");
        for (i, (g, c)) in self.gain_curve.iter().zip(&self.cumulative_curve).enumerate() {
            let _ = writeln!(out, "{},{g:.12},{c:.12}", i + 1);
        }
        out
    }

    /// Plain-text summary and per-trial table.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let opt = |v: Option<f64>| v.map_or("-".to_owned(), |x| format!("{x:+.4}"));
        let _ = writeln!(out, "trials           {} ({} completed, {} failed)", self.n_trials, self.n_completed, self.n_failed);
        let _ = writeln!(out, "positive delta   {}/{} ({:.1}%)", self.n_positive, self.n_completed, 100.0 * self.positive_rate);
        let _ = writeln!(
            out,
            "mean delta p     {:+.4}  [p25 {}, p75 {}]",
            self.mean_delta_p,
            opt(self.p25_delta_p),
            opt(self.p75_delta_p)
        );
        let _ = writeln!(out, "threshold rate   {:.1}%", 100.0 * self.threshold_rate);
        let _ = writeln!(out, "improvement rate {:.1}%", 100.0 * self.improvement_rate);
        let _ = writeln!(
            out,
            "cost             {} calls, {} tokens in, {} tokens out, {} oracle calls, ~{:.4} (estimate)",
            self.cost.provider_calls, self.cost.tokens_in, self.cost.tokens_out, self.cost.oracle_calls, self.cost.estimated_currency
        );
        let _ = writeln!(out, "\niteration  mean gain  cumulative");
        for (i, (g, c)) in self.gain_curve.iter().zip(&self.cumulative_curve).enumerate() {
            let _ = writeln!(out, "{:>9}  {:>+9.4}  {:>+10.4}", i + 1, g, c);
        }
        let _ = writeln!(out, "\n{:<16} {:<10} {:>7} {:>7} {:>8} {:>5}  termination", "trial", "mode", "p0", "p*", "delta", "iters");
        for r in &self.trials {
            match &r.error {
                Some(e) => {
                    let _ = writeln!(out, "{:<16} error: {e}", r.nct_id);
                }
                None => {
                    let _ = writeln!(
                        out,
                        "{:<16} {:<10} {:>7.4} {:>7.4} {:>+8.4} {:>5}  {}",
                        r.nct_id,
                        r.failure_mode.map_or("-", |m| m.as_str()),
                        r.p0.unwrap_or(f64::NAN),
                        r.p_star.unwrap_or(f64::NAN),
                        r.delta_p.unwrap_or(f64::NAN),
                        r.iterations,
                        r.termination.map_or("-", |t| t.as_str()),
                    );
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(d: f64, gains: &[f64]) -> TrialRow {
        let mut r = TrialRow::failed("X", "", gains.len());
        r.error = None;
        r.delta_p = Some(d);
        r.gains = gains.to_vec();
        r.threshold_achieved = d > 0.1;
        r
    }

    #[test]
    fn aggregates() {
        let rep = CorpusReport::from_rows(vec![row(0.2, &[0.1, 0.1]), row(0.0, &[0.0, 0.0]), TrialRow::failed("Y", "boom", 2)], 2);
        assert_eq!(rep.n_completed, 2);
        assert_eq!(rep.n_failed, 1);
        assert_eq!(rep.positive_rate, 0.5);
        assert!((rep.mean_delta_p - 0.1).abs() < 1e-15);
        assert_eq!(rep.gain_curve, vec![0.05, 0.05]);
        assert!((rep.cumulative_curve[1] - 0.1).abs() < 1e-15);
        assert!(rep.render_text().contains("boom"));
        assert_eq!(rep.curve_csv().lines().count(), 3);
    }

    #[test]
    fn empty_report() {
        let rep = CorpusReport::from_rows(Vec::new(), 5);
        assert_eq!(rep.n_trials, 0);
        assert_eq!(rep.mean_delta_p, 0.0);
        assert_eq!(rep.cost, Cost::default());
    }
}
