use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lm::{LanguageModel, TokenId};

/// Mean log-likelihood of a continuation given its prompt.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoherenceScore {
    /// Negative infinity exactly when `degenerate` is set.
    #[serde(with = "neg_inf_as_null")]
    pub value: f64,
    pub token_count: usize,
    pub degenerate: bool,
}

pub fn coherence(
    scorer: &dyn LanguageModel,
    prompt: &[TokenId],
    continuation: &[TokenId],
) -> Result<CoherenceScore> {
    if continuation.is_empty() {
        return Err(Error::InvalidInput(
            "coherence needs a non-empty continuation".into(),
        ));
    }
    let scored = scorer.score(prompt, continuation)?;
    let n = scored.logprobs.len();
    // Shifting by the first entry keeps equal entries' mean exact.
    let value = if scored.degenerate {
        f64::NEG_INFINITY
    } else {
        let base = scored.logprobs[0];
        base + scored.logprobs.iter().map(|lp| lp - base).sum::<f64>() / n as f64
    };
    Ok(CoherenceScore {
        value,
        token_count: n,
        degenerate: scored.degenerate,
    })
}

/// Mean over non-degenerate scores.
pub fn corpus_coherence<'a>(
    scores: impl IntoIterator<Item = &'a CoherenceScore>,
) -> (Option<f64>, usize) {
    let mut sum = 0.0;
    let mut counted = 0usize;
    let mut degenerate = 0usize;
    for s in scores {
        if s.degenerate {
            degenerate += 1;
        } else {
            sum += s.value;
            counted += 1;
        }
    }
    ((counted > 0).then(|| sum / counted as f64), degenerate)
}

pub(crate) mod neg_inf_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_some(v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NEG_INFINITY))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::{TableModel, Vocabulary};

    fn vectors(n: usize) -> Vec<Vec<f64>> {
        vec![vec![1.0]; n]
    }

    #[test]
    fn certain_scorer_is_zero() {
        let vocab = Vocabulary::new(2, None).unwrap();
        let m = TableModel::unconditional(vocab, vec![1.0, 0.0], vectors(2)).unwrap();
        let c = coherence(&m, &[0], &[0, 0, 0]).unwrap();
        assert_eq!(c.value, 0.0);
        assert_eq!(c.token_count, 3);
    }

    #[test]
    fn uniform_scorer_is_log_inverse_vocab() {
        let vocab = Vocabulary::new(4, None).unwrap();
        let m = TableModel::unconditional(vocab, vec![0.25; 4], vectors(4)).unwrap();
        let c = coherence(&m, &[1, 2], &[3, 0, 1, 1, 2]).unwrap();
        assert_eq!(c.value, 0.25f64.ln());
        assert!(!c.degenerate);
    }

    #[test]
    fn zero_probability_is_degenerate() {
        let vocab = Vocabulary::new(2, None).unwrap();
        let m = TableModel::unconditional(vocab, vec![1.0, 0.0], vectors(2)).unwrap();
        let c = coherence(&m, &[0], &[0, 1]).unwrap();
        assert!(c.degenerate && c.value == f64::NEG_INFINITY);
        assert_eq!(
            serde_json::to_string(&c).unwrap(),
            r#"{"value":null,"token_count":2,"degenerate":true}"#
        );
        let back: CoherenceScore =
            serde_json::from_str(r#"{"value":null,"token_count":2,"degenerate":true}"#).unwrap();
        assert_eq!(back.value, f64::NEG_INFINITY);
        let (mean, degenerate) = corpus_coherence(&[c]);
        assert_eq!((mean, degenerate), (None, 1));
    }

    #[test]
    fn empty_continuation_rejected() {
        let vocab = Vocabulary::new(2, None).unwrap();
        let m = TableModel::unconditional(vocab, vec![0.5, 0.5], vectors(2)).unwrap();
        assert!(coherence(&m, &[0], &[]).is_err());
    }
}
