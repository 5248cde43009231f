//! Decoding strategies and the shared generation loop.
//!
//! [`DecodeSpec`] selects one of six step rules: greedy, top-k, nucleus,
//! typical, contrastive decoding and contrastive search. [`Decoder::generate`]
//! applies the rule token by token until the end-of-document token is emitted
//! or the continuation reaches the length cap.

mod contrastive;
mod sampling;
mod trace;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lm::{LanguageModel, TokenId, TokenSequence, Vocabulary};

pub use contrastive::{
    cd_candidate_set, cd_select, cd_step, cosine, cs_select, cs_step, degeneration_penalty,
    temperature_log_probs, Choice,
};
pub use sampling::{
    descending_order, entropy, greedy_step, nucleus_sample_step, nucleus_support,
    sample_from_support, top_k_support, topk_sample_step, typical_sample_step, typical_support,
};
pub use trace::{CandidateTrace, StepTrace};

pub const DEFAULT_TOP_K: usize = 50;
pub const DEFAULT_NUCLEUS_P: f64 = 0.95;
pub const DEFAULT_TYPICAL_TAU: f64 = 0.95;
pub const DEFAULT_CD_ALPHA: f64 = 0.1;
pub const DEFAULT_CD_AMATEUR_TEMPERATURE: f64 = 0.5;
pub const DEFAULT_CS_ALPHA: f64 = 0.6;
pub const DEFAULT_CS_K: usize = 5;
pub const DEFAULT_MAX_LENGTH: usize = 256;

/// Strategy and hyperparameters for one generation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DecodeSpec {
    Greedy,
    TopK {
        k: usize,
    },
    Nucleus {
        p: f64,
    },
    Typical {
        tau: f64,
    },
    ContrastiveDecoding {
        alpha: f64,
        amateur_temperature: f64,
    },
    ContrastiveSearch {
        k: usize,
        alpha: f64,
    },
}

impl DecodeSpec {
    pub fn top_k() -> Self {
        DecodeSpec::TopK { k: DEFAULT_TOP_K }
    }

    pub fn nucleus() -> Self {
        DecodeSpec::Nucleus {
            p: DEFAULT_NUCLEUS_P,
        }
    }

    pub fn typical() -> Self {
        DecodeSpec::Typical {
            tau: DEFAULT_TYPICAL_TAU,
        }
    }

    pub fn contrastive_decoding() -> Self {
        DecodeSpec::ContrastiveDecoding {
            alpha: DEFAULT_CD_ALPHA,
            amateur_temperature: DEFAULT_CD_AMATEUR_TEMPERATURE,
        }
    }

    pub fn contrastive_search() -> Self {
        DecodeSpec::ContrastiveSearch {
            k: DEFAULT_CS_K,
            alpha: DEFAULT_CS_ALPHA,
        }
    }

    /// Kebab-case strategy name, as used in serialized specs.
    pub fn strategy_name(&self) -> &'static str {
        match self {
            DecodeSpec::Greedy => "greedy",
            DecodeSpec::TopK { .. } => "top-k",
            DecodeSpec::Nucleus { .. } => "nucleus",
            DecodeSpec::Typical { .. } => "typical",
            DecodeSpec::ContrastiveDecoding { .. } => "contrastive-decoding",
            DecodeSpec::ContrastiveSearch { .. } => "contrastive-search",
        }
    }

    pub fn needs_amateur(&self) -> bool {
        matches!(self, DecodeSpec::ContrastiveDecoding { .. })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        match *self {
            DecodeSpec::Greedy => Ok(()),
            DecodeSpec::TopK { k } | DecodeSpec::ContrastiveSearch { k, .. } if k == 0 => {
                bad(format!("{}: k must be at least 1", self.strategy_name()))
            }
            DecodeSpec::TopK { .. } => Ok(()),
            DecodeSpec::Nucleus { p } if !(p > 0.0 && p <= 1.0) => {
                bad(format!("nucleus: p must lie in (0, 1], got {p}"))
            }
            DecodeSpec::Typical { tau } if !(tau > 0.0 && tau <= 1.0) => {
                bad(format!("typical: tau must lie in (0, 1], got {tau}"))
            }
            DecodeSpec::Nucleus { .. } | DecodeSpec::Typical { .. } => Ok(()),
            DecodeSpec::ContrastiveDecoding {
                alpha,
                amateur_temperature,
            } => {
                if !(alpha > 0.0 && alpha <= 1.0) {
                    bad(format!(
                        "contrastive-decoding: alpha must lie in (0, 1], got {alpha}"
                    ))
                } else if !(amateur_temperature > 0.0 && amateur_temperature.is_finite()) {
                    bad(format!(
                        "contrastive-decoding: amateur temperature must be positive, got {amateur_temperature}"
                    ))
                } else {
                    Ok(())
                }
            }
            DecodeSpec::ContrastiveSearch { alpha, .. } => {
                if (0.0..=1.0).contains(&alpha) {
                    Ok(())
                } else {
                    bad(format!(
                        "contrastive-search: alpha must lie in [0, 1], got {alpha}"
                    ))
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    EndOfDocument,
    MaxLength,
}

/// One prompt's generation and the settings that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub vocab: Vocabulary,
    pub prompt: Vec<TokenId>,
    pub continuation: Vec<TokenId>,
    pub spec: DecodeSpec,
    pub max_length: usize,
    pub seed: u64,
    pub stop_reason: StopReason,
}

impl GenerationRecord {
    pub fn prompt_sequence(&self) -> Result<TokenSequence> {
        TokenSequence::new(self.prompt.clone(), self.vocab)
    }

    pub fn continuation_sequence(&self) -> Result<TokenSequence> {
        TokenSequence::new(self.continuation.clone(), self.vocab)
    }
}

/// Models consulted by the generation loop. Contrastive decoding needs an
/// amateur; every other strategy uses `model` alone.
#[derive(Clone, Copy)]
pub struct Decoder<'a> {
    model: &'a dyn LanguageModel,
    amateur: Option<&'a dyn LanguageModel>,
}

impl<'a> Decoder<'a> {
    pub fn new(model: &'a dyn LanguageModel) -> Self {
        Self {
            model,
            amateur: None,
        }
    }

    pub fn with_amateur(mut self, amateur: &'a dyn LanguageModel) -> Self {
        self.amateur = Some(amateur);
        self
    }

    /// Picks the next token for `context` under `spec`.
    pub fn step(
        &self,
        spec: &DecodeSpec,
        context: &[TokenId],
        rng: &mut ChaCha8Rng,
    ) -> Result<Choice> {
        let sampled = |dist: Vec<f64>, support: Vec<TokenId>, rng: &mut ChaCha8Rng| {
            let token = sample_from_support(&dist, &support, rng);
            Choice {
                token,
                trace: StepTrace {
                    position: 0,
                    candidates: support
                        .iter()
                        .map(|&t| CandidateTrace::probability(t, dist[t as usize]))
                        .collect(),
                    chosen: token,
                },
            }
        };
        match *spec {
            DecodeSpec::Greedy => {
                let dist = self.model.next_distribution(context)?;
                let token = greedy_step(&dist)?;
                Ok(Choice {
                    token,
                    trace: StepTrace {
                        position: 0,
                        candidates: vec![CandidateTrace::probability(token, dist[token as usize])],
                        chosen: token,
                    },
                })
            }
            DecodeSpec::TopK { k } => {
                let dist = self.model.next_distribution(context)?;
                let support = top_k_support(&dist, k);
                Ok(sampled(dist, support, rng))
            }
            DecodeSpec::Nucleus { p } => {
                let dist = self.model.next_distribution(context)?;
                let support = nucleus_support(&dist, p);
                Ok(sampled(dist, support, rng))
            }
            DecodeSpec::Typical { tau } => {
                let dist = self.model.next_distribution(context)?;
                let support = typical_support(&dist, tau);
                if support.is_empty() {
                    return Err(Error::InvalidModel(
                        "distribution has no positive entries".into(),
                    ));
                }
                Ok(sampled(dist, support, rng))
            }
            DecodeSpec::ContrastiveDecoding {
                alpha,
                amateur_temperature,
            } => {
                let amateur = self.amateur.ok_or_else(|| {
                    Error::InvalidInput("contrastive decoding needs an amateur model".into())
                })?;
                cd_step(self.model, amateur, context, alpha, amateur_temperature)
            }
            DecodeSpec::ContrastiveSearch { k, alpha } => cs_step(self.model, context, k, alpha),
        }
    }

    pub fn generate(
        &self,
        prompt: &[TokenId],
        spec: &DecodeSpec,
        max_length: usize,
        seed: u64,
    ) -> Result<GenerationRecord> {
        self.generate_traced(prompt, spec, max_length, seed, |_| {})
    }

    /// Like [`generate`](Self::generate), handing each step's trace to `on_step`.
    pub fn generate_traced(
        &self,
        prompt: &[TokenId],
        spec: &DecodeSpec,
        max_length: usize,
        seed: u64,
        mut on_step: impl FnMut(&StepTrace),
    ) -> Result<GenerationRecord> {
        spec.validate()?;
        if prompt.is_empty() {
            return Err(Error::InvalidInput("prompt must be non-empty".into()));
        }
        if max_length == 0 {
            return Err(Error::InvalidInput("max_length must be at least 1".into()));
        }
        let vocab = self.model.vocab();
        vocab.check_tokens(prompt)?;
        if spec.needs_amateur() {
            match self.amateur {
                None => {
                    return Err(Error::InvalidInput(
                        "contrastive decoding needs an amateur model".into(),
                    ))
                }
                Some(a) if a.vocab().size() != vocab.size() => {
                    return Err(Error::InvalidInput(format!(
                        "amateur vocabulary size {} differs from expert {}",
                        a.vocab().size(),
                        vocab.size()
                    )))
                }
                Some(_) => {}
            }
        }

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut context = prompt.to_vec();
        let mut continuation = Vec::new();
        let stop_reason = loop {
            let choice = self
                .step(spec, &context, &mut rng)
                .map_err(|e| Error::Generation {
                    partial: continuation.clone(),
                    source: Box::new(e),
                })?;
            let mut trace = choice.trace;
            trace.position = continuation.len();
            on_step(&trace);

            continuation.push(choice.token);
            context.push(choice.token);
            if Some(choice.token) == vocab.eod_token() {
                break StopReason::EndOfDocument;
            }
            if continuation.len() >= max_length {
                break StopReason::MaxLength;
            }
        };

        Ok(GenerationRecord {
            vocab,
            prompt: prompt.to_vec(),
            continuation,
            spec: *spec,
            max_length,
            seed,
            stop_reason,
        })
    }
}
