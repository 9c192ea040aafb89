//! Iterative redesign of failed clinical-trial protocols.
//!
//! A protocol is decomposed into addressable slots. Each iteration asks an
//! agent pipeline for targets and variants, filters them through a judge,
//! searches combinations of the survivors against a success-probability
//! oracle, attributes a marginal reward to every modification, and distils
//! the rewards into memory that steers the next iteration.
//!
//! The crate is organised bottom-up:
//!
//! * [`protocol`] and [`modification`]: data model and the apply operator.
//! * [`oracle`]: scoring backends and the content-hash cache.
//! * [`agents`]: prompt stages, the tagged-output parser and providers.
//! * [`explore`]: exhaustive and beam search plus reward attribution.
//! * [`memory`]: local and global memory, distillation, confidence rules.
//! * [`engine`]: the iteration driver, batch runner and reports.
//! * [`synthetic`]: seeded planted-truth corpora for end-to-end checks.

macro_rules! string_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $token:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub enum $name { $($variant),+ }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self { $($name::$variant => $token),+ }
            }
        }

        impl ::std::fmt::Display for $name {
            fn fmt(&self, f: &mut ::std::fmt::Formatter<'_>) -> ::std::fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl ::serde::Serialize for $name {
            fn serialize<S: ::serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(self.as_str())
            }
        }

        impl<'de> ::serde::Deserialize<'de> for $name {
            fn deserialize<D: ::serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let raw = String::deserialize(d)?;
                raw.parse().map_err(::serde::de::Error::custom)
            }
        }
    };
}
pub(crate) use string_enum;

/// `string_enum!` plus a case-insensitive `FromStr` over the tokens.
macro_rules! token_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $token:literal),+ $(,)? }) => {
        $crate::string_enum! { $(#[$meta])* $name { $($variant => $token),+ } }

        impl ::std::str::FromStr for $name {
            type Err = $crate::UnknownToken;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                let t = s.trim();
                $name::ALL
                    .iter()
                    .copied()
                    .find(|v| v.as_str().eq_ignore_ascii_case(t))
                    .ok_or_else(|| $crate::UnknownToken {
                        kind: stringify!($name),
                        token: t.to_owned(),
                    })
            }
        }
    };
}

/// A token that does not name any variant of an enum.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown {kind} token {token:?}")]
pub struct UnknownToken {
    pub kind: &'static str,
    pub token: String,
}

pub mod agents;
pub mod engine;
pub mod explore;
pub mod memory;
pub mod modification;
pub mod oracle;
pub mod protocol;
pub mod synthetic;

pub use agents::{
    ClassificationScores, HttpProvider, ImpactLevel, ModificationTarget, Provider, ProviderError, ScriptedPlaybook,
    ScriptedProvider,
};
pub use engine::{OptimizationResult, RunConfig, Termination};
pub use explore::{ExplorationResult, RewardRecord, SearchStrategy};
pub use memory::{GlobalMemory, LocalMemory, RedesignPool};
pub use modification::{
    apply, ActionType, Augmentation, CandidateProtocol, Category, ModificationSet, SlotKey,
    ValidationTier,
};
pub use oracle::{OracleError, OutcomeOracle, ReferenceOracle, RemoteOracle, ScoreCache, ScoringSpec};
pub use protocol::{
    canonicalize, hash_protocol, parse_protocol, Aspect, AspectRef, CanonicalHash, FailureMode,
    Phase, ProtocolError, TrialProtocol,
};
