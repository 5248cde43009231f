//! Newline-delimited JSON messages exchanged with a model backend.
//!
//! ```text
//! {"op":"hello"}                                  -> {"vocab_size":N,"eod":E,"dim":D}
//! {"op":"step","tokens":[...]}                    -> {"probs":[...],"reprs":[[...],...]}
//! {"op":"score","prefix":[...],"continuation":[...]} -> {"logprobs":[...]}
//! ```
//!
//! `eod` is `null` when the vocabulary has no end-of-document token. A `null`
//! entry in `logprobs` stands for negative infinity (a zero-probability token).
//! Any request the backend cannot serve is answered with `{"error":"..."}` and
//! the connection stays open.

use serde::{Deserialize, Serialize};

use super::TokenId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum Request {
    Hello,
    Step {
        tokens: Vec<TokenId>,
    },
    Score {
        prefix: Vec<TokenId>,
        continuation: Vec<TokenId>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HelloReply {
    pub vocab_size: usize,
    pub eod: Option<TokenId>,
    pub dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReply {
    pub probs: Vec<f64>,
    pub reprs: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReply {
    pub logprobs: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReply {
    pub error: String,
}

/// Maximum deviation of a remote distribution's sum from 1.
pub const REMOTE_DISTRIBUTION_TOLERANCE: f64 = 1e-4;
