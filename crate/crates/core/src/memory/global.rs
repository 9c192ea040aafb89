use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::distill::{nearest_rank, render_recommendation};
use super::{ConfidenceRules, GuidanceEntry, LocalMemory, StrategicGuidance, Support, TacticalExemplars};
use crate::agents::prompts::{self, mode_label, render};
use crate::agents::provider::{AgentContext, Stage};
use crate::agents::tagged::{find_block, ParseError};
use crate::explore::REWARD_EPS;
use crate::modification::ActionType;
use crate::protocol::FailureMode;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum MemoryError {
    #[error("cannot access memory file {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("memory file {path} is malformed: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("memory file {path} has schema version {found}; this build reads up to {SCHEMA_VERSION}")]
    UnsupportedVersion { path: PathBuf, found: u32 },
}

/// Running reward statistics for one pattern.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Signature {
    pub n: u64,
    pub n_success: u64,
    pub mean_r: f64,
    /// Sum of squared deviations from the running mean.
    pub m2: f64,
    /// Population variance, `m2 / n`.
    pub var_r: f64,
    pub success_rate: f64,
}

impl Signature {
    pub fn update(&mut self, r: f64) {
        self.n += 1;
        if r > REWARD_EPS {
            self.n_success += 1;
        }
        let delta = r - self.mean_r;
        self.mean_r += delta / self.n as f64;
        self.m2 += delta * (r - self.mean_r);
        self.var_r = self.m2 / self.n as f64;
        self.success_rate = self.n_success as f64 / self.n as f64;
    }

    pub fn support(&self) -> Support {
        Support {
            n: self.n,
            mean_r: self.mean_r,
            success_rate: self.success_rate,
        }
    }
}

/// Attempts and successes of one action type.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionCount {
    pub n: u64,
    pub n_success: u64,
}

/// Everything remembered about one failure mode.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModeMemory {
    pub strategic: StrategicGuidance,
    pub signatures: BTreeMap<String, Signature>,
    #[serde(default)]
    pub actions: BTreeMap<ActionType, ActionCount>,
}

impl ModeMemory {
    /// Confidence rules with Laplace-smoothed action success rates.
    pub fn confidence_rules(&self, d: f64, b: f64) -> ConfidenceRules {
        ConfidenceRules {
            d,
            b,
            action_rates: self
                .actions
                .iter()
                .filter(|(_, c)| c.n > 0)
                .map(|(a, c)| (*a, (c.n_success as f64 + 1.0) / (c.n as f64 + 2.0)))
                .collect(),
        }
    }
}

/// Persistent memory keyed by failure mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalMemory {
    pub schema_version: u32,
    pub modes: BTreeMap<FailureMode, ModeMemory>,
}

impl Default for GlobalMemory {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            modes: BTreeMap::new(),
        }
    }
}

impl GlobalMemory {
    pub fn is_empty(&self) -> bool {
        self.modes.values().all(|m| m.strategic.is_empty() && m.signatures.is_empty())
    }

    pub fn mode(&self, y: FailureMode) -> Option<&ModeMemory> {
        self.modes.get(&y)
    }

    /// Human-readable listing of guidance, signatures and action counts.
    pub fn render_text(&self) -> String {
        use std::fmt::Write as _;
        let mut out = format!("global memory (schema version {})\n", self.schema_version);
        if self.is_empty() {
            out.push_str("empty\n");
            return out;
        }
        for (mode, m) in &self.modes {
            let _ = writeln!(out, "\n[{mode}]");
            if !m.strategic.is_empty() {
                let _ = writeln!(out, "guidance:");
                for e in m.strategic.iter() {
                    let _ = writeln!(
                        out,
                        "  {} {} (n={}, mean r={:+.4}, success {:.0}%): {}",
                        e.key,
                        e.action,
                        e.support.n,
                        e.support.mean_r,
                        100.0 * e.support.success_rate,
                        e.recommendation
                    );
                }
            }
            let _ = writeln!(out, "signatures:");
            let _ = writeln!(out, "  {:<34} {:>5} {:>10} {:>10} {:>8}", "pattern", "n", "mean r", "var r", "success");
            for (k, sig) in &m.signatures {
                let _ = writeln!(
                    out,
                    "  {:<34} {:>5} {:>+10.5} {:>10.6} {:>7.1}%",
                    k,
                    sig.n,
                    sig.mean_r,
                    sig.var_r,
                    100.0 * sig.success_rate
                );
            }
            if !m.actions.is_empty() {
                let _ = writeln!(out, "actions:");
                for (a, c) in &m.actions {
                    let _ = writeln!(out, "  {:<8} {}/{} succeeded", a.as_str(), c.n_success, c.n);
                }
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("memory serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str, path: &Path) -> Result<Self, MemoryError> {
        let raw: serde_json::Value = serde_json::from_str(text).map_err(|e| MemoryError::Format {
            path: path.to_owned(),
            reason: e.to_string(),
        })?;
        let found = raw.get("schema_version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
        if found > SCHEMA_VERSION || found == 0 {
            return Err(MemoryError::UnsupportedVersion {
                path: path.to_owned(),
                found,
            });
        }
        serde_json::from_value(raw).map_err(|e| MemoryError::Format {
            path: path.to_owned(),
            reason: e.to_string(),
        })
    }

    /// Reads a memory file; a missing file is an empty memory.
    pub fn load(path: &Path) -> Result<Self, MemoryError> {
        match fs::read_to_string(path) {
            Ok(text) => Self::from_json(&text, path),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Self::default()),
            Err(source) => Err(MemoryError::Io {
                path: path.to_owned(),
                source,
            }),
        }
    }

    /// Writes through a temporary file in the same directory and renames
    /// it over `path`.
    pub fn save(&self, path: &Path) -> Result<(), MemoryError> {
        let io = |source| MemoryError::Io {
            path: path.to_owned(),
            source,
        };
        let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
        fs::create_dir_all(dir).map_err(io)?;
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
        let write = || -> std::io::Result<()> {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(self.to_json().as_bytes())?;
            f.sync_all()?;
            fs::rename(&tmp, path)
        };
        write().map_err(|e| {
            let _ = fs::remove_file(&tmp);
            io(e)
        })
    }
}

/// Guidance for iteration `t` and the exemplars gathered so far in this run.
/// Global guidance is only returned for the first iteration.
pub fn load_memory(
    global: &GlobalMemory,
    y: FailureMode,
    t: usize,
    local: &LocalMemory,
) -> (StrategicGuidance, TacticalExemplars) {
    let strategic = if t == 1 {
        global.mode(y).map(|m| m.strategic.clone()).unwrap_or_default()
    } else {
        StrategicGuidance::default()
    };
    let tactical = if t == 1 {
        TacticalExemplars::default()
    } else {
        local.tactical.clone()
    };
    (strategic, tactical)
}

/// Parses `<guidance><entry key="..">text</entry>...</guidance>`.
pub fn parse_guidance(text: &str) -> Result<BTreeMap<String, String>, ParseError> {
    let outer = find_block(text, "guidance")?;
    let mut out = BTreeMap::new();
    for e in outer.children("entry")? {
        let key = e.attr("key").ok_or_else(|| ParseError::MissingField {
            block: "entry".into(),
            field: "key".into(),
        })?;
        let t = e.text();
        if !t.is_empty() {
            out.insert(key.trim().to_owned(), t);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TransferSummary {
    pub rewards_used: usize,
    pub signatures_updated: Vec<String>,
    pub guidance_keys: Vec<String>,
    pub summarized: bool,
}

type KeyRewards = (Vec<f64>, BTreeMap<ActionType, Vec<f64>>);

/// Folds a finished run's rewards into global memory for mode `y`.
///
/// Signatures and action counts are updated from every attributed reward.
/// Patterns whose mean reward in this run is positive and in the top
/// quartile get a guidance entry, worded by `summarizer` when given and
/// by a fixed template otherwise.
pub fn transfer(
    local: &LocalMemory,
    global: &mut GlobalMemory,
    y: FailureMode,
    summarizer: Option<&AgentContext<'_>>,
) -> TransferSummary {
    let mut by_key: BTreeMap<String, KeyRewards> = BTreeMap::new();
    let mut summary = TransferSummary::default();
    let mut attributed = Vec::new();
    for rec in local.all_rewards() {
        let (Some(r), Some(aug)) = (rec.r, local.augmentations.get(&rec.augmentation_id)) else {
            continue;
        };
        attributed.push((aug.pattern_key(), aug.action, r));
    }
    if attributed.is_empty() {
        return summary;
    }
    let mode = global.modes.entry(y).or_default();
    for (key, action, r) in attributed {
        mode.signatures.entry(key.clone()).or_default().update(r);
        let c = mode.actions.entry(action).or_default();
        c.n += 1;
        if r > REWARD_EPS {
            c.n_success += 1;
        }
        let e = by_key.entry(key).or_default();
        e.0.push(r);
        e.1.entry(action).or_default().push(r);
        summary.rewards_used += 1;
    }
    summary.signatures_updated = by_key.keys().cloned().collect();

    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let key_means: Vec<f64> = by_key.values().map(|(rs, _)| mean(rs)).filter(|&m| m > REWARD_EPS).collect();
    let Some(gate) = nearest_rank(&key_means, 0.75) else {
        return summary;
    };
    let mut chosen: Vec<(String, ActionType, f64)> = Vec::new();
    for (key, (rs, actions)) in &by_key {
        let m = mean(rs);
        if m > REWARD_EPS && m >= gate {
            let best = actions
                .iter()
                .map(|(a, v)| (*a, mean(v)))
                .fold(None::<(ActionType, f64)>, |best, (a, v)| match best {
                    Some((_, bv)) if bv >= v => best,
                    _ => Some((a, v)),
                })
                .expect("non-empty");
            chosen.push((key.clone(), best.0, m));
        }
    }

    let mut worded: BTreeMap<String, String> = BTreeMap::new();
    if let Some(ctx) = summarizer {
        let patterns: String = chosen
            .iter()
            .map(|(k, a, m)| format!("- key=\"{k}\" action={a} mean_reward={m:.4}\n"))
            .collect();
        let prompt = render(prompts::SUMMARIZE, &[("failure_mode", mode_label(y)), ("patterns", &patterns)]);
        match ctx.call(Stage::Summarize, local.last_iteration(), "", &prompt, parse_guidance) {
            Ok(w) => {
                summary.summarized = true;
                worded = w;
            }
            Err(e) => log::warn!("summary call failed, using template wording: {e}"),
        }
    }
    for (key, action, m) in chosen {
        let sig = mode.signatures[&key];
        let recommendation = worded
            .remove(&key)
            .unwrap_or_else(|| render_recommendation(&key, action, m));
        mode.strategic.upsert(GuidanceEntry {
            key: key.clone(),
            action,
            recommendation,
            support: sig.support(),
        });
        summary.guidance_keys.push(key);
    }
    summary
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_empty_store() {
        let text = GlobalMemory::default().render_text();
        assert!(text.contains("empty"));
        assert!(text.contains(&format!("schema version {SCHEMA_VERSION}")));
    }

    #[test]
    fn welford_matches_batch() {
        let xs = [0.03, -0.01, 0.07, 0.0, 0.02];
        let mut s = Signature::default();
        for x in xs {
            s.update(x);
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        assert!((s.mean_r - mean).abs() < 1e-15);
        assert!((s.var_r - var).abs() < 1e-15);
        assert_eq!(s.success_rate, 3.0 / 5.0);
    }

    #[test]
    fn load_missing_is_empty_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let g = GlobalMemory::load(&path).unwrap();
        assert!(g.is_empty());
        let mut g2 = GlobalMemory::default();
        let m = g2.modes.entry(FailureMode::PoorEnrollment).or_default();
        let mut sig = Signature::default();
        sig.update(0.1);
        sig.update(0.2 / 3.0);
        m.signatures.insert("X".into(), sig);
        g2.save(&path).unwrap();
        assert_eq!(GlobalMemory::load(&path).unwrap(), g2);
    }

    #[test]
    fn rejects_future_schema() {
        let e = GlobalMemory::from_json(r#"{"schema_version": 99, "modes": {}}"#, Path::new("x")).unwrap_err();
        assert!(matches!(e, MemoryError::UnsupportedVersion { found: 99, .. }));
    }

    #[test]
    fn guidance_parser() {
        let g = parse_guidance("ok\n<guidance>\n<entry key=\"A\">Do a\nthing.</entry>\n<entry key=\"B\"></entry></guidance>").unwrap();
        assert_eq!(g.len(), 1);
        assert_eq!(g["A"], "Do a thing.");
        assert!(parse_guidance("<guidance><entry>x</entry></guidance>").is_err());
    }

    #[test]
    fn load_memory_only_warm_starts_first_iteration() {
        let mut g = GlobalMemory::default();
        g.modes.entry(FailureMode::PoorEnrollment).or_default().strategic.upsert(GuidanceEntry {
            key: "K".into(),
            action: ActionType::Delete,
            recommendation: "r".into(),
            support: Support::default(),
        });
        let local = LocalMemory::default();
        let (s1, t1) = load_memory(&g, FailureMode::PoorEnrollment, 1, &local);
        assert!(!s1.is_empty() && t1.is_empty());
        let (s3, _) = load_memory(&g, FailureMode::PoorEnrollment, 3, &local);
        assert!(s3.is_empty());
        let (s, t) = load_memory(&GlobalMemory::default(), FailureMode::PoorEnrollment, 1, &local);
        assert!(s.is_empty() && t.is_empty());
    }
}
