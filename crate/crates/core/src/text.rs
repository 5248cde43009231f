//! Whitespace and character tokenization for toy corpora.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::lm::TokenId;

pub const EOD_SYMBOL: &str = "<eod>";
pub const UNK_SYMBOL: &str = "<unk>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tokenization {
    Whitespace,
    Character,
}

/// Vocabulary built from a corpus. Id 0 is `<eod>`, id 1 is `<unk>`, and the
/// remaining ids follow first appearance in the corpus.
#[derive(Debug, Clone)]
pub struct TextCodec {
    mode: Tokenization,
    symbols: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl TextCodec {
    pub const EOD: TokenId = 0;
    pub const UNK: TokenId = 1;

    pub fn build<'a>(documents: impl IntoIterator<Item = &'a str>, mode: Tokenization) -> Self {
        let mut codec = Self {
            mode,
            symbols: Vec::new(),
            index: HashMap::new(),
        };
        codec.intern(EOD_SYMBOL);
        codec.intern(UNK_SYMBOL);
        for doc in documents {
            for piece in split(doc, mode) {
                codec.intern(&piece);
            }
        }
        codec
    }

    fn intern(&mut self, symbol: &str) -> TokenId {
        if let Some(&id) = self.index.get(symbol) {
            return id;
        }
        let id = self.symbols.len() as TokenId;
        self.symbols.push(symbol.to_string());
        self.index.insert(symbol.to_string(), id);
        id
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        split(text, self.mode)
            .iter()
            .map(|p| self.index.get(p.as_str()).copied().unwrap_or(Self::UNK))
            .collect()
    }

    pub fn decode(&self, tokens: &[TokenId]) -> String {
        let sep = match self.mode {
            Tokenization::Whitespace => " ",
            Tokenization::Character => "",
        };
        tokens
            .iter()
            .map(|&t| {
                self.symbols
                    .get(t as usize)
                    .map_or(UNK_SYMBOL, String::as_str)
            })
            .collect::<Vec<_>>()
            .join(sep)
    }
}

fn split(text: &str, mode: Tokenization) -> Vec<String> {
    match mode {
        Tokenization::Whitespace => text.split_whitespace().map(str::to_string).collect(),
        Tokenization::Character => text.chars().map(String::from).collect(),
    }
}
