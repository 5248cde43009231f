//! The language-model contract consumed by every decoder and metric.
//!
//! A model answers three questions about a token context: the next-token
//! distribution, one representation vector per context token, and the
//! per-position log-probabilities of a continuation. [`TableModel`] and
//! [`NgramModel`] are deterministic in-process models; [`RemoteModel`] speaks
//! the newline-delimited JSON protocol in [`protocol`] to an external backend.

mod ngram;
pub mod protocol;
mod remote;
mod spec;
mod table;

use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use ngram::NgramModel;
pub use remote::{serve, RemoteModel, Server, DEFAULT_TIMEOUT};
pub use spec::{load_toy_model, ToyModel, ToyModelSpec};
pub use table::{TableModel, TableRow, WindowVector};

pub type TokenId = u32;

/// Tolerance on the distribution sum accepted from in-process models.
pub const DISTRIBUTION_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "VocabularyFields", into = "VocabularyFields")]
pub struct Vocabulary {
    size: usize,
    eod_token: Option<TokenId>,
}

#[derive(Serialize, Deserialize)]
struct VocabularyFields {
    size: usize,
    eod: Option<TokenId>,
}

impl TryFrom<VocabularyFields> for Vocabulary {
    type Error = Error;

    fn try_from(f: VocabularyFields) -> Result<Self> {
        Vocabulary::new(f.size, f.eod)
    }
}

impl From<Vocabulary> for VocabularyFields {
    fn from(v: Vocabulary) -> Self {
        VocabularyFields {
            size: v.size,
            eod: v.eod_token,
        }
    }
}

impl Vocabulary {
    pub fn new(size: usize, eod_token: Option<TokenId>) -> Result<Self> {
        if size < 2 {
            return Err(Error::InvalidInput(format!(
                "vocabulary size must be at least 2, got {size}"
            )));
        }
        if let Some(eod) = eod_token {
            if eod as usize >= size {
                return Err(Error::InvalidToken {
                    token: eod,
                    vocab_size: size,
                });
            }
        }
        Ok(Self { size, eod_token })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn eod_token(&self) -> Option<TokenId> {
        self.eod_token
    }

    pub fn check_token(&self, token: TokenId) -> Result<()> {
        if (token as usize) < self.size {
            Ok(())
        } else {
            Err(Error::InvalidToken {
                token,
                vocab_size: self.size,
            })
        }
    }

    pub fn check_tokens(&self, tokens: &[TokenId]) -> Result<()> {
        tokens.iter().try_for_each(|&t| self.check_token(t))
    }
}

/// Token ids validated against a vocabulary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    tokens: Vec<TokenId>,
    vocab: Vocabulary,
}

impl TokenSequence {
    pub fn new(tokens: Vec<TokenId>, vocab: Vocabulary) -> Result<Self> {
        vocab.check_tokens(&tokens)?;
        Ok(Self { tokens, vocab })
    }

    pub fn empty(vocab: Vocabulary) -> Self {
        Self {
            tokens: Vec::new(),
            vocab,
        }
    }

    pub fn vocab(&self) -> Vocabulary {
        self.vocab
    }

    pub fn tokens(&self) -> &[TokenId] {
        &self.tokens
    }

    pub fn into_tokens(self) -> Vec<TokenId> {
        self.tokens
    }

    pub fn push(&mut self, token: TokenId) -> Result<()> {
        self.vocab.check_token(token)?;
        self.tokens.push(token);
        Ok(())
    }

    /// New sequence holding `self` followed by `other`.
    pub fn concat(&self, other: &[TokenId]) -> Result<Self> {
        let mut tokens = self.tokens.clone();
        tokens.extend_from_slice(other);
        Self::new(tokens, self.vocab)
    }
}

impl Deref for TokenSequence {
    type Target = [TokenId];

    fn deref(&self) -> &[TokenId] {
        &self.tokens
    }
}

/// Everything a decoder needs from a model at one position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutput {
    distribution: Vec<f64>,
    representations: Vec<Vec<f64>>,
}

impl StepOutput {
    /// Validates the distribution against `vocab_size` with sum tolerance `tol`
    /// and checks that the representations share one dimension.
    pub fn with_tolerance(
        distribution: Vec<f64>,
        representations: Vec<Vec<f64>>,
        vocab_size: usize,
        tol: f64,
    ) -> Result<Self> {
        validate_distribution(&distribution, vocab_size, tol)
            .map_err(|m| Error::InvalidModel(format!("step distribution {m}")))?;
        let dim = representations.first().map_or(1, Vec::len);
        if dim == 0 || representations.iter().any(|r| r.len() != dim) {
            return Err(Error::InvalidModel(
                "representation vectors must share a dimension of at least 1".into(),
            ));
        }
        Ok(Self {
            distribution,
            representations,
        })
    }

    pub fn new(
        distribution: Vec<f64>,
        representations: Vec<Vec<f64>>,
        vocab_size: usize,
    ) -> Result<Self> {
        Self::with_tolerance(
            distribution,
            representations,
            vocab_size,
            DISTRIBUTION_TOLERANCE,
        )
    }

    pub fn distribution(&self) -> &[f64] {
        &self.distribution
    }

    pub fn representations(&self) -> &[Vec<f64>] {
        &self.representations
    }

    pub fn into_parts(self) -> (Vec<f64>, Vec<Vec<f64>>) {
        (self.distribution, self.representations)
    }
}

/// Checks length, sign, finiteness and sum of a probability vector.
pub(crate) fn validate_distribution(
    dist: &[f64],
    vocab_size: usize,
    tol: f64,
) -> std::result::Result<(), String> {
    if dist.len() != vocab_size {
        return Err(format!("has {} entries, expected {vocab_size}", dist.len()));
    }
    if let Some(bad) = dist.iter().find(|p| !p.is_finite() || **p < 0.0) {
        return Err(format!("contains invalid probability {bad}"));
    }
    let sum: f64 = dist.iter().sum();
    if (sum - 1.0).abs() > tol {
        return Err(format!("sums to {sum}, not 1"));
    }
    Ok(())
}

/// Per-position log-probabilities of a continuation.
///
/// Zero-probability tokens appear as `f64::NEG_INFINITY` and set `degenerate`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSequence {
    pub logprobs: Vec<f64>,
    pub degenerate: bool,
}

impl ScoredSequence {
    pub fn from_logprobs(logprobs: Vec<f64>) -> Self {
        let degenerate = logprobs.contains(&f64::NEG_INFINITY);
        Self {
            logprobs,
            degenerate,
        }
    }
}

/// Behavioural contract of a language model.
///
/// Implementations must be deterministic: identical inputs yield identical
/// outputs. Only [`vocab`](Self::vocab), [`representation_dim`](Self::representation_dim)
/// and [`step`](Self::step) are required; the remaining methods are defined in
/// terms of `step` and may be overridden with cheaper equivalents.
pub trait LanguageModel: Send + Sync {
    fn vocab(&self) -> Vocabulary;

    fn representation_dim(&self) -> usize;

    /// Next-token distribution plus one representation per context token.
    fn step(&self, context: &[TokenId]) -> Result<StepOutput>;

    /// Next-token distribution only.
    fn next_distribution(&self, context: &[TokenId]) -> Result<Vec<f64>> {
        Ok(self.step(context)?.into_parts().0)
    }

    /// `log p(continuation[i] | prefix ++ continuation[..i])` for every `i`.
    fn score(&self, prefix: &[TokenId], continuation: &[TokenId]) -> Result<ScoredSequence> {
        if continuation.is_empty() {
            return Err(Error::InvalidInput("continuation must be non-empty".into()));
        }
        let vocab = self.vocab();
        vocab.check_tokens(prefix)?;
        vocab.check_tokens(continuation)?;
        let mut context = prefix.to_vec();
        let mut logprobs = Vec::with_capacity(continuation.len());
        for &token in continuation {
            let dist = self.next_distribution(&context)?;
            logprobs.push(dist[token as usize].ln());
            context.push(token);
        }
        Ok(ScoredSequence::from_logprobs(logprobs))
    }

    /// Representation of `candidate` when appended to `context`; equal to the
    /// last representation of `step(context ++ [candidate])`.
    fn candidate_representation(
        &self,
        context: &[TokenId],
        candidate: TokenId,
    ) -> Result<Vec<f64>> {
        self.vocab().check_token(candidate)?;
        let mut extended = context.to_vec();
        extended.push(candidate);
        let (_, mut reprs) = self.step(&extended)?.into_parts();
        reprs
            .pop()
            .ok_or_else(|| Error::InvalidModel("step returned no representations".into()))
    }

    fn candidate_representations(
        &self,
        context: &[TokenId],
        candidates: &[TokenId],
    ) -> Result<Vec<Vec<f64>>> {
        candidates
            .iter()
            .map(|&c| self.candidate_representation(context, c))
            .collect()
    }
}

impl<M: LanguageModel + ?Sized> LanguageModel for &M {
    fn vocab(&self) -> Vocabulary {
        (**self).vocab()
    }
    fn representation_dim(&self) -> usize {
        (**self).representation_dim()
    }
    fn step(&self, context: &[TokenId]) -> Result<StepOutput> {
        (**self).step(context)
    }
    fn next_distribution(&self, context: &[TokenId]) -> Result<Vec<f64>> {
        (**self).next_distribution(context)
    }
    fn score(&self, prefix: &[TokenId], continuation: &[TokenId]) -> Result<ScoredSequence> {
        (**self).score(prefix, continuation)
    }
    fn candidate_representation(
        &self,
        context: &[TokenId],
        candidate: TokenId,
    ) -> Result<Vec<f64>> {
        (**self).candidate_representation(context, candidate)
    }
    fn candidate_representations(
        &self,
        context: &[TokenId],
        candidates: &[TokenId],
    ) -> Result<Vec<Vec<f64>>> {
        (**self).candidate_representations(context, candidates)
    }
}

impl<M: LanguageModel + ?Sized> LanguageModel for std::sync::Arc<M> {
    fn vocab(&self) -> Vocabulary {
        (**self).vocab()
    }
    fn representation_dim(&self) -> usize {
        (**self).representation_dim()
    }
    fn step(&self, context: &[TokenId]) -> Result<StepOutput> {
        (**self).step(context)
    }
    fn next_distribution(&self, context: &[TokenId]) -> Result<Vec<f64>> {
        (**self).next_distribution(context)
    }
    fn score(&self, prefix: &[TokenId], continuation: &[TokenId]) -> Result<ScoredSequence> {
        (**self).score(prefix, continuation)
    }
    fn candidate_representation(
        &self,
        context: &[TokenId],
        candidate: TokenId,
    ) -> Result<Vec<f64>> {
        (**self).candidate_representation(context, candidate)
    }
    fn candidate_representations(
        &self,
        context: &[TokenId],
        candidates: &[TokenId],
    ) -> Result<Vec<Vec<f64>>> {
        (**self).candidate_representations(context, candidates)
    }
}

/// Validates a non-empty context against the model vocabulary.
pub(crate) fn check_context(vocab: &Vocabulary, context: &[TokenId]) -> Result<()> {
    if context.is_empty() {
        return Err(Error::EmptyContext);
    }
    vocab.check_tokens(context)
}
