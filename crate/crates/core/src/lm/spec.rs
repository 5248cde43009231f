use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{LanguageModel, NgramModel, TableModel, TableRow, TokenId, Vocabulary, WindowVector};
use crate::error::{Error, Result};
use crate::text::{TextCodec, Tokenization};

/// JSON description of an in-process toy model.
///
/// Relative file paths are resolved against the directory of the spec file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ToyModelSpec {
    Table {
        vocab_size: usize,
        #[serde(default)]
        eod: Option<TokenId>,
        rows: Vec<TableRow>,
        token_vectors: Vec<Vec<f64>>,
        #[serde(default)]
        window_vectors: Vec<WindowVector>,
    },
    Ngram {
        /// Required for token corpora; derived from the text for `text_file`.
        #[serde(default)]
        vocab_size: Option<usize>,
        #[serde(default)]
        eod: Option<TokenId>,
        order: usize,
        smoothing: f64,
        /// Inline token-id documents.
        #[serde(default)]
        corpus: Vec<Vec<TokenId>>,
        /// JSON Lines of `{"tokens":[...]}` documents.
        #[serde(default)]
        corpus_file: Option<PathBuf>,
        /// Plain text, one document per non-empty line; `<eod>` is appended.
        #[serde(default)]
        text_file: Option<PathBuf>,
        #[serde(default)]
        tokenization: Option<Tokenization>,
    },
}

/// A constructed toy model and, for text corpora, the codec that built its vocabulary.
#[derive(Clone)]
pub struct ToyModel {
    pub model: Arc<dyn LanguageModel>,
    pub codec: Option<TextCodec>,
}

impl std::fmt::Debug for ToyModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ToyModel")
            .field("vocab", &self.model.vocab())
            .field("has_codec", &self.codec.is_some())
            .finish()
    }
}

impl ToyModelSpec {
    pub fn build(&self, base_dir: &Path) -> Result<ToyModel> {
        match self {
            ToyModelSpec::Table {
                vocab_size,
                eod,
                rows,
                token_vectors,
                window_vectors,
            } => {
                let vocab = Vocabulary::new(*vocab_size, *eod)?;
                let model = TableModel::new(
                    vocab,
                    rows.clone(),
                    token_vectors.clone(),
                    window_vectors.clone(),
                )?;
                Ok(ToyModel {
                    model: Arc::new(model),
                    codec: None,
                })
            }
            ToyModelSpec::Ngram {
                vocab_size,
                eod,
                order,
                smoothing,
                corpus,
                corpus_file,
                text_file,
                tokenization,
            } => {
                if let Some(text_file) = text_file {
                    let path = base_dir.join(text_file);
                    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
                    let codec = TextCodec::build(
                        lines.iter().copied(),
                        tokenization.unwrap_or(Tokenization::Whitespace),
                    );
                    let docs: Vec<Vec<TokenId>> = lines
                        .iter()
                        .map(|l| {
                            let mut d = codec.encode(l);
                            d.push(TextCodec::EOD);
                            d
                        })
                        .collect();
                    let vocab = Vocabulary::new(codec.len(), Some(TextCodec::EOD))?;
                    let model = NgramModel::train(vocab, &docs, *order, *smoothing)?;
                    return Ok(ToyModel {
                        model: Arc::new(model),
                        codec: Some(codec),
                    });
                }
                let size = vocab_size.ok_or_else(|| {
                    Error::InvalidModel("ngram spec over token ids needs vocab_size".into())
                })?;
                let vocab = Vocabulary::new(size, *eod)?;
                let mut docs = corpus.clone();
                if let Some(file) = corpus_file {
                    docs.extend(read_token_documents(&base_dir.join(file))?);
                }
                let model = NgramModel::train(vocab, &docs, *order, *smoothing)?;
                Ok(ToyModel {
                    model: Arc::new(model),
                    codec: None,
                })
            }
        }
    }
}

#[derive(Deserialize)]
struct TokenLine {
    tokens: Vec<TokenId>,
}

fn read_token_documents(path: &Path) -> Result<Vec<Vec<TokenId>>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut docs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: TokenLine = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        docs.push(parsed.tokens);
    }
    Ok(docs)
}

/// Reads and builds a toy model from a JSON spec file.
pub fn load_toy_model(path: &Path) -> Result<ToyModel> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let spec: ToyModelSpec = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })?;
    spec.build(path.parent().unwrap_or(Path::new(".")))
}
