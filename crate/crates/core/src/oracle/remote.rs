use std::time::Duration;

use super::{OracleError, OutcomeOracle};
use crate::protocol::{canonicalize, TrialProtocol};

/// Client for an external scoring service.
///
/// POSTs the canonical protocol document and expects `{"probability": x}`.
pub struct RemoteOracle {
    endpoint: String,
    agent: ureq::Agent,
}

impl RemoteOracle {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            endpoint: endpoint.into(),
            agent,
        }
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }
}

pub(crate) fn parse_probability(body: &str) -> Result<f64, OracleError> {
    let value: serde_json::Value =
        serde_json::from_str(body).map_err(|e| OracleError::BadResponse(format!("not JSON: {e}")))?;
    let x = value
        .get("probability")
        .ok_or_else(|| OracleError::BadResponse("missing `probability`".into()))?
        .as_f64()
        .ok_or_else(|| OracleError::BadResponse("`probability` is not a number".into()))?;
    if !(0.0..=1.0).contains(&x) {
        return Err(OracleError::BadResponse(format!("probability {x} outside [0, 1]")));
    }
    Ok(x)
}

impl OutcomeOracle for RemoteOracle {
    fn score(&self, p: &TrialProtocol) -> Result<f64, OracleError> {
        let mut resp = self
            .agent
            .post(&self.endpoint)
            .header("content-type", "application/json")
            .send(canonicalize(p))
            .map_err(|e| OracleError::Transport(e.to_string()))?;
        let status = resp.status();
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| OracleError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(OracleError::BadResponse(format!("HTTP {status}")));
        }
        parse_probability(&body)
    }

    fn descriptor(&self) -> String {
        format!("remote:{}", self.endpoint)
    }
}
