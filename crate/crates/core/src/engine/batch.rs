use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::report::{CorpusReport, TrialRow};
use super::run::{finish_run, run, Backends, RunOutput};
use super::{EngineError, RunConfig};
use crate::memory::GlobalMemory;
use crate::protocol::{FailureMode, TrialProtocol};

/// A batch described on disk. Paths are relative to the manifest file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchManifest {
    pub trials: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub protocol: String,
    /// Overrides the protocol's own `failure_reason`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure_mode: Option<FailureMode>,
    /// `ref:<scoring spec>` or `remote:<url>`.
    pub oracle: String,
    /// `scripted:<playbook>` or `http`.
    pub provider: String,
}

impl BatchManifest {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }
}

/// One trial of a batch with its own backends.
pub struct BatchItem<'a> {
    pub protocol: TrialProtocol,
    pub mode: FailureMode,
    pub backends: Backends<'a>,
}

pub struct BatchOutcome {
    pub runs: Vec<Result<RunOutput, EngineError>>,
    pub report: CorpusReport,
}

/// Runs every item and aggregates a report.
///
/// Items run in waves of `cfg.parallelism`. Every run in a wave reads the
/// global memory as it stood before the wave; transfers are applied after
/// the wave in input order. A failed trial is recorded and the batch
/// continues.
pub fn batch(items: &[BatchItem<'_>], global: &mut GlobalMemory, cfg: &RunConfig) -> BatchOutcome {
    let width = cfg.parallelism.max(1);
    let mut runs: Vec<Result<RunOutput, EngineError>> = Vec::with_capacity(items.len());
    for wave in items.chunks(width) {
        let snapshot = &*global;
        let mut outs: Vec<Result<RunOutput, EngineError>> = if width == 1 {
            wave.iter()
                .map(|it| run(&it.protocol, it.mode, snapshot, cfg, it.backends))
                .collect()
        } else {
            wave.par_iter()
                .map(|it| run(&it.protocol, it.mode, snapshot, cfg, it.backends))
                .collect()
        };
        for (out, it) in outs.iter_mut().zip(wave) {
            match out {
                Ok(o) => finish_run(o, global, Some(it.backends.provider)),
                Err(e) => log::warn!("{}: {}", it.protocol.nct_id, e.detail()),
            }
        }
        runs.extend(outs);
    }
    let rows = runs
        .iter()
        .zip(items)
        .map(|(r, it)| match r {
            Ok(o) => TrialRow::from_result(&o.result, cfg.n_max),
            Err(e) => TrialRow::failed(it.protocol.nct_id.clone(), e.detail(), cfg.n_max),
        })
        .collect();
    BatchOutcome {
        runs,
        report: CorpusReport::from_rows(rows, cfg.n_max),
    }
}
