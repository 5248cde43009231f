use std::collections::HashMap;

use super::{check_context, LanguageModel, StepOutput, TokenId, Vocabulary};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
struct Counts {
    next: Vec<u64>,
    total: u64,
}

/// Additively smoothed n-gram model.
///
/// `p(v | h) = (c(h, v) + λ) / (c(h) + λ·|V|)` where `h` is the last
/// `min(order - 1, |context|)` tokens. Histories never seen in training fall to
/// the uniform distribution. Each token's representation is its row of
/// smoothed bigram continuation probabilities, so the representation dimension
/// equals the vocabulary size.
#[derive(Debug, Clone)]
pub struct NgramModel {
    vocab: Vocabulary,
    order: usize,
    smoothing: f64,
    /// `counts[h]` maps histories of length `h` to next-token counts.
    counts: Vec<HashMap<Vec<TokenId>, Counts>>,
    embeddings: Vec<Vec<f64>>,
}

impl NgramModel {
    /// Counts n-grams within each document; no n-gram spans two documents.
    pub fn train(
        vocab: Vocabulary,
        documents: &[Vec<TokenId>],
        order: usize,
        smoothing: f64,
    ) -> Result<Self> {
        if order == 0 {
            return Err(Error::InvalidModel(
                "n-gram order must be at least 1".into(),
            ));
        }
        if !(smoothing > 0.0 && smoothing.is_finite()) {
            return Err(Error::InvalidModel(format!(
                "smoothing constant must be positive, got {smoothing}"
            )));
        }
        let v = vocab.size();
        let mut counts: Vec<HashMap<Vec<TokenId>, Counts>> = vec![HashMap::new(); order.max(2)];
        for doc in documents {
            vocab.check_tokens(doc)?;
            for i in 0..doc.len() {
                for (h, table) in counts.iter_mut().enumerate() {
                    if h > i {
                        break;
                    }
                    let entry = table
                        .entry(doc[i - h..i].to_vec())
                        .or_insert_with(|| Counts {
                            next: vec![0; v],
                            total: 0,
                        });
                    entry.next[doc[i] as usize] += 1;
                    entry.total += 1;
                }
            }
        }

        let bigram = |u: TokenId| -> Vec<f64> {
            let c = counts[1].get(&vec![u]);
            smoothed_row(c, v, smoothing)
        };
        let embeddings = (0..v as TokenId).map(bigram).collect();
        counts.truncate(order);

        Ok(Self {
            vocab,
            order,
            smoothing,
            counts,
            embeddings,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn smoothing(&self) -> f64 {
        self.smoothing
    }

    fn distribution(&self, context: &[TokenId]) -> Vec<f64> {
        let h = (self.order - 1).min(context.len());
        let counts = self.counts[h].get(&context[context.len() - h..]);
        smoothed_row(counts, self.vocab.size(), self.smoothing)
    }
}

fn smoothed_row(counts: Option<&Counts>, v: usize, smoothing: f64) -> Vec<f64> {
    match counts {
        Some(c) => {
            let denom = c.total as f64 + smoothing * v as f64;
            c.next
                .iter()
                .map(|&n| (n as f64 + smoothing) / denom)
                .collect()
        }
        None => vec![1.0 / v as f64; v],
    }
}

impl LanguageModel for NgramModel {
    fn vocab(&self) -> Vocabulary {
        self.vocab
    }

    fn representation_dim(&self) -> usize {
        self.vocab.size()
    }

    fn step(&self, context: &[TokenId]) -> Result<StepOutput> {
        check_context(&self.vocab, context)?;
        let reprs = context
            .iter()
            .map(|&t| self.embeddings[t as usize].clone())
            .collect();
        StepOutput::new(self.distribution(context), reprs, self.vocab.size())
    }

    fn next_distribution(&self, context: &[TokenId]) -> Result<Vec<f64>> {
        self.vocab.check_tokens(context)?;
        Ok(self.distribution(context))
    }

    fn candidate_representation(
        &self,
        context: &[TokenId],
        candidate: TokenId,
    ) -> Result<Vec<f64>> {
        self.vocab.check_tokens(context)?;
        self.vocab.check_token(candidate)?;
        Ok(self.embeddings[candidate as usize].clone())
    }
}
