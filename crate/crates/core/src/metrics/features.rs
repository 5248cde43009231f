use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lm::{LanguageModel, TokenId};

pub const DEFAULT_BIGRAM_DIM: usize = 256;

/// Maps a text to a fixed-length vector for frontier quantization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FeatureExtractor {
    /// Bag of bigrams hashed into `dim` buckets, normalized to unit L1 mass.
    BigramHash { dim: usize },
    /// Scorer representations of the text's tokens, averaged.
    MeanRepresentation,
}

impl Default for FeatureExtractor {
    fn default() -> Self {
        FeatureExtractor::BigramHash {
            dim: DEFAULT_BIGRAM_DIM,
        }
    }
}

impl FeatureExtractor {
    pub fn name(&self) -> &'static str {
        match self {
            FeatureExtractor::BigramHash { .. } => "bigram-hash",
            FeatureExtractor::MeanRepresentation => "mean-representation",
        }
    }

    pub fn needs_model(&self) -> bool {
        matches!(self, FeatureExtractor::MeanRepresentation)
    }

    /// `prompt` only conditions the scorer; features describe `text` alone.
    pub fn extract(
        &self,
        scorer: Option<&dyn LanguageModel>,
        prompt: &[TokenId],
        text: &[TokenId],
    ) -> Result<Vec<f64>> {
        match *self {
            FeatureExtractor::BigramHash { dim } => {
                if dim == 0 {
                    return Err(Error::InvalidInput(
                        "bigram feature dim must be positive".into(),
                    ));
                }
                Ok(bigram_hash(text, dim))
            }
            FeatureExtractor::MeanRepresentation => {
                let scorer = scorer.ok_or_else(|| {
                    Error::InvalidInput("mean-representation features need a scorer model".into())
                })?;
                mean_representation(scorer, prompt, text)
            }
        }
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Texts shorter than two tokens map to the zero vector.
pub fn bigram_hash(text: &[TokenId], dim: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    let total = text.len().saturating_sub(1);
    for w in text.windows(2) {
        let key = (u64::from(w[0]) << 32) | u64::from(w[1]);
        v[(splitmix64(key) % dim as u64) as usize] += 1.0 / total as f64;
    }
    v
}

pub fn mean_representation(
    scorer: &dyn LanguageModel,
    prompt: &[TokenId],
    text: &[TokenId],
) -> Result<Vec<f64>> {
    let dim = scorer.representation_dim();
    if text.is_empty() {
        return Ok(vec![0.0; dim]);
    }
    let full: Vec<TokenId> = prompt.iter().chain(text).copied().collect();
    let out = scorer.step(&full)?;
    let reprs = &out.representations()[prompt.len()..];
    let mut mean = vec![0.0; dim];
    for r in reprs {
        mean.iter_mut().zip(r).for_each(|(m, x)| *m += x);
    }
    mean.iter_mut().for_each(|m| *m /= reprs.len() as f64);
    Ok(mean)
}
