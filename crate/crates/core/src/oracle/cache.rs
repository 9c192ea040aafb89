use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use rayon::prelude::*;

use super::{OracleError, OutcomeOracle};
use crate::protocol::{hash_protocol, CanonicalHash, TrialProtocol};

/// Memoizes oracle scores by `(canonical hash, backend descriptor)`.
///
/// Errors are never cached.
#[derive(Default)]
pub struct ScoreCache {
    entries: Mutex<HashMap<(CanonicalHash, String), f64>>,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl ScoreCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::Relaxed)
    }

    /// Every miss results in exactly one backend call.
    pub fn misses(&self) -> u64 {
        self.misses.load(Ordering::Relaxed)
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn lookup(&self, key: &(CanonicalHash, String)) -> Option<f64> {
        self.entries.lock().expect("cache lock").get(key).copied()
    }

    fn store(&self, key: (CanonicalHash, String), score: f64) {
        self.entries.lock().expect("cache lock").insert(key, score);
    }

    pub fn cached_score(&self, oracle: &dyn OutcomeOracle, p: &TrialProtocol) -> Result<f64, OracleError> {
        let key = (hash_protocol(p), oracle.descriptor());
        if let Some(s) = self.lookup(&key) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(s);
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let s = oracle.score(p)?;
        self.store(key, s);
        Ok(s)
    }

    /// Scores a batch, calling the backend once per distinct uncached
    /// protocol. Misses are scored in parallel; results come back in input order.
    pub fn score_batch(
        &self,
        oracle: &dyn OutcomeOracle,
        batch: &[(CanonicalHash, &TrialProtocol)],
    ) -> Vec<Result<f64, OracleError>> {
        let descriptor = oracle.descriptor();
        let mut known: BTreeMap<CanonicalHash, Result<f64, OracleError>> = BTreeMap::new();
        let mut pending: BTreeMap<CanonicalHash, &TrialProtocol> = BTreeMap::new();
        for (h, p) in batch {
            if known.contains_key(h) || pending.contains_key(h) {
                continue;
            }
            match self.lookup(&(*h, descriptor.clone())) {
                Some(s) => {
                    known.insert(*h, Ok(s));
                }
                None => {
                    pending.insert(*h, p);
                }
            }
        }
        self.misses.fetch_add(pending.len() as u64, Ordering::Relaxed);
        self.hits.fetch_add((batch.len() - pending.len()) as u64, Ordering::Relaxed);
        let fresh: Vec<(CanonicalHash, Result<f64, OracleError>)> = pending
            .into_par_iter()
            .map(|(h, p)| (h, oracle.score(p)))
            .collect();
        for (h, r) in fresh {
            if let Ok(s) = r {
                self.store((h, descriptor.clone()), s);
            }
            known.insert(h, r);
        }
        batch.iter().map(|(h, _)| known[h].clone()).collect()
    }
}
