use serde::{Deserialize, Serialize};

use crate::lm::TokenId;

/// Per-candidate diagnostics for one decoding step.
///
/// Scores of positive infinity (a zero amateur probability under contrastive
/// decoding) serialize as `null`; `flagged` marks them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateTrace {
    pub token: TokenId,
    /// Model confidence (contrastive search), expert probability (contrastive
    /// decoding) or sampling probability (baselines).
    pub probability: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub penalty: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expert_logprob: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amateur_logprob: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub flagged: bool,
}

impl CandidateTrace {
    pub(crate) fn probability(token: TokenId, probability: f64) -> Self {
        Self {
            token,
            probability,
            penalty: None,
            expert_logprob: None,
            amateur_logprob: None,
            score: None,
            flagged: false,
        }
    }
}

/// What one decoding step considered and chose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTrace {
    /// Index of the chosen token within the continuation.
    pub position: usize,
    pub candidates: Vec<CandidateTrace>,
    pub chosen: TokenId,
}

impl StepTrace {
    pub fn contains_chosen(&self) -> bool {
        self.candidates.iter().any(|c| c.token == self.chosen)
    }

    pub fn any_flagged(&self) -> bool {
        self.candidates.iter().any(|c| c.flagged)
    }
}
