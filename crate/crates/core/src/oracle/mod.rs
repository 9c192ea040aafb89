//! Success-probability oracles and the score cache.

mod cache;
mod reference;
mod remote;

pub use cache::ScoreCache;
pub use reference::{ReferenceOracle, Scope, ScoringRule, ScoringSpec};
pub use remote::RemoteOracle;

use thiserror::Error;

use crate::protocol::TrialProtocol;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("bad response: {0}")]
    BadResponse(String),
    #[error("bad pattern: {0}")]
    BadPattern(String),
    #[error("invalid scoring spec: {0}")]
    BadSpec(String),
}

/// A scoring backend `f: protocol -> [0, 1]`.
///
/// Implementations must be deterministic for a fixed backend state and safe
/// to call from several threads.
pub trait OutcomeOracle: Send + Sync {
    fn score(&self, p: &TrialProtocol) -> Result<f64, OracleError>;

    /// Backend name and version; part of every cache key.
    fn descriptor(&self) -> String;
}

impl<T: OutcomeOracle + ?Sized> OutcomeOracle for std::sync::Arc<T> {
    fn score(&self, p: &TrialProtocol) -> Result<f64, OracleError> {
        (**self).score(p)
    }

    fn descriptor(&self) -> String {
        (**self).descriptor()
    }
}

impl<T: OutcomeOracle + ?Sized> OutcomeOracle for Box<T> {
    fn score(&self, p: &TrialProtocol) -> Result<f64, OracleError> {
        (**self).score(p)
    }

    fn descriptor(&self) -> String {
        (**self).descriptor()
    }
}
