//! JSON checkpoints of a federation between rounds.
//!
//! Every random stream is keyed by `(seed, round, client, epoch)`, so the
//! federation state plus the config is all a resumed run needs.

use serde::{Deserialize, Serialize};

use crate::error::FormatError;
use crate::federation::FederationState;

pub const CHECKPOINT_FORMAT: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: u32,
    /// Canonical config echo of the run that wrote the checkpoint.
    pub fingerprint: String,
    pub state: FederationState,
}

impl Checkpoint {
    pub fn new(fingerprint: String, state: FederationState) -> Self {
        Self {
            format: CHECKPOINT_FORMAT,
            fingerprint,
            state,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint state is always serializable")
    }
}

/// Decode and sanity-check a checkpoint.
pub fn parse_checkpoint(text: &str) -> Result<Checkpoint, FormatError> {
    let cp: Checkpoint = serde_json::from_str(text).map_err(|e| FormatError::Malformed {
        line: e.line(),
        message: e.to_string(),
    })?;
    let invalid = |message: String| FormatError::Malformed { line: 0, message };
    if cp.format != CHECKPOINT_FORMAT {
        return Err(invalid(format!("unsupported checkpoint format {}", cp.format)));
    }
    let st = &cp.state;
    if st.next_round == 0 {
        return Err(invalid("next_round must be at least 1".into()));
    }
    if st.params.iter().any(|p| !p.is_finite()) {
        return Err(invalid("non-finite parameter".into()));
    }
    if let Some(c) = &st.consolidation {
        let n = st.params.len();
        if c.matrix().len() != n || c.anchor().len() != n {
            return Err(invalid("consolidation state length differs from parameters".into()));
        }
        if c.matrix().iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(invalid("consolidation matrix must be finite and non-negative".into()));
        }
        if !(c.sigma() >= 0.0 && c.sigma().is_finite() && (0.0..=1.0).contains(&c.gamma())) {
            return Err(invalid("consolidation factors out of range".into()));
        }
    }
    Ok(cp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::consolidation::ConsolidationState;
    use crate::federation::RunLog;
    use crate::optim::OptimizerConfig;

    fn sample() -> Checkpoint {
        let params = vec![0.1, -0.0, 1e-300, 1.2345678901234567];
        Checkpoint::new(
            "seed = 1\n".into(),
            FederationState {
                next_round: 3,
                params: params.clone().into(),
                optimizers: vec![OptimizerConfig::default().fresh_state(4)],
                consolidation: Some(ConsolidationState::new(&params, 0.1, 0.5).unwrap()),
                log: RunLog::new(),
            },
        )
    }

    #[test]
    fn round_trips_bit_exactly() {
        let cp = sample();
        let back = parse_checkpoint(&cp.to_json()).unwrap();
        assert_eq!(back, cp);
        assert!(back.state.params.bit_eq(&cp.state.params));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(parse_checkpoint("").is_err());
        assert!(parse_checkpoint("{}").is_err());
        let mut cp = sample();
        cp.format = 9;
        assert!(parse_checkpoint(&cp.to_json()).is_err());
        let mut cp = sample();
        cp.state.next_round = 0;
        assert!(parse_checkpoint(&cp.to_json()).is_err());
    }
}
