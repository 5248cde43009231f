use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{check_context, validate_distribution, LanguageModel, StepOutput, TokenId, Vocabulary};
use crate::error::{Error, Result};

/// Row tolerance for explicit tables.
const ROW_TOLERANCE: f64 = 1e-9;

/// One conditional distribution, applied when the context ends with `context`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub context: Vec<TokenId>,
    pub probs: Vec<f64>,
}

/// Representation override for a context position whose preceding tokens
/// (inclusive) end with `window`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowVector {
    pub window: Vec<TokenId>,
    pub vector: Vec<f64>,
}

/// A model given entirely by explicit tables.
///
/// The next-token distribution is the row keyed by the longest suffix of the
/// context present in the table; the empty suffix (the unconditional row) is
/// mandatory. The representation of context position `j` is the window vector
/// whose key is the longest suffix of `context[..=j]` present in the table,
/// falling back to the per-token vector of `context[j]`.
#[derive(Debug, Clone)]
pub struct TableModel {
    vocab: Vocabulary,
    order: usize,
    rows: HashMap<Vec<TokenId>, Vec<f64>>,
    token_vectors: Vec<Vec<f64>>,
    repr_window: usize,
    window_vectors: HashMap<Vec<TokenId>, Vec<f64>>,
    dim: usize,
}

impl TableModel {
    pub fn new(
        vocab: Vocabulary,
        rows: Vec<TableRow>,
        token_vectors: Vec<Vec<f64>>,
        window_vectors: Vec<WindowVector>,
    ) -> Result<Self> {
        let invalid = |m: String| Error::InvalidModel(format!("table model: {m}"));

        let mut table = HashMap::with_capacity(rows.len());
        let mut order = 0;
        for row in rows {
            vocab.check_tokens(&row.context)?;
            validate_distribution(&row.probs, vocab.size(), ROW_TOLERANCE)
                .map_err(|m| invalid(format!("row for context {:?} {m}", row.context)))?;
            order = order.max(row.context.len());
            if table.insert(row.context.clone(), row.probs).is_some() {
                return Err(invalid(format!(
                    "duplicate row for context {:?}",
                    row.context
                )));
            }
        }
        if !table.contains_key(&Vec::new()) {
            return Err(invalid("missing unconditional row (empty context)".into()));
        }

        if token_vectors.len() != vocab.size() {
            return Err(invalid(format!(
                "expected {} token vectors, got {}",
                vocab.size(),
                token_vectors.len()
            )));
        }
        let dim = token_vectors[0].len();
        if dim == 0 {
            return Err(invalid(
                "representation dimension must be at least 1".into(),
            ));
        }
        let wrong_dim = |v: &[f64]| v.len() != dim || v.iter().any(|x| !x.is_finite());
        if token_vectors.iter().any(|v| wrong_dim(v)) {
            return Err(invalid(format!(
                "token vectors must be finite with dimension {dim}"
            )));
        }

        let mut windows = HashMap::with_capacity(window_vectors.len());
        let mut repr_window = 0;
        for wv in window_vectors {
            if wv.window.is_empty() {
                return Err(invalid("window vectors need a non-empty window".into()));
            }
            vocab.check_tokens(&wv.window)?;
            if wrong_dim(&wv.vector) {
                return Err(invalid(format!(
                    "window vector for {:?} must be finite with dimension {dim}",
                    wv.window
                )));
            }
            repr_window = repr_window.max(wv.window.len());
            windows.insert(wv.window, wv.vector);
        }

        Ok(Self {
            vocab,
            order,
            rows: table,
            token_vectors,
            repr_window,
            window_vectors: windows,
            dim,
        })
    }

    /// A model with a single unconditional row.
    pub fn unconditional(
        vocab: Vocabulary,
        probs: Vec<f64>,
        token_vectors: Vec<Vec<f64>>,
    ) -> Result<Self> {
        Self::new(
            vocab,
            vec![TableRow {
                context: Vec::new(),
                probs,
            }],
            token_vectors,
            Vec::new(),
        )
    }

    /// Longest context suffix the distribution lookup considers.
    pub fn order(&self) -> usize {
        self.order
    }

    fn row(&self, context: &[TokenId]) -> &[f64] {
        let longest = self.order.min(context.len());
        (0..=longest)
            .rev()
            .find_map(|m| self.rows.get(&context[context.len() - m..]))
            .expect("unconditional row is checked at construction")
    }

    /// Representation of the last token of `prefix`.
    fn representation_at(&self, prefix: &[TokenId]) -> &[f64] {
        let longest = self.repr_window.min(prefix.len());
        (1..=longest)
            .rev()
            .find_map(|m| self.window_vectors.get(&prefix[prefix.len() - m..]))
            .unwrap_or_else(|| &self.token_vectors[*prefix.last().unwrap() as usize])
    }
}

impl LanguageModel for TableModel {
    fn vocab(&self) -> Vocabulary {
        self.vocab
    }

    fn representation_dim(&self) -> usize {
        self.dim
    }

    fn step(&self, context: &[TokenId]) -> Result<StepOutput> {
        check_context(&self.vocab, context)?;
        let reprs = (1..=context.len())
            .map(|end| self.representation_at(&context[..end]).to_vec())
            .collect();
        StepOutput::new(self.row(context).to_vec(), reprs, self.vocab.size())
    }

    fn next_distribution(&self, context: &[TokenId]) -> Result<Vec<f64>> {
        self.vocab.check_tokens(context)?;
        Ok(self.row(context).to_vec())
    }

    fn candidate_representation(
        &self,
        context: &[TokenId],
        candidate: TokenId,
    ) -> Result<Vec<f64>> {
        self.vocab.check_tokens(context)?;
        self.vocab.check_token(candidate)?;
        let mut extended = context.to_vec();
        extended.push(candidate);
        Ok(self.representation_at(&extended).to_vec())
    }
}
