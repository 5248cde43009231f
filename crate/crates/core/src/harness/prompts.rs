use std::path::Path;

use serde::{Deserialize, Serialize};

use super::io::{read_jsonl, Id};
use crate::error::{Error, Result};
use crate::lm::TokenId;
use crate::text::TextCodec;

pub const DEFAULT_PROMPT_LENGTH: usize = 32;

/// One line of a prompt or reference file: pre-tokenized ids, or raw text for toy corpora.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptLine {
    pub id: Id,
    #[serde(default)]
    pub tokens: Option<Vec<TokenId>>,
    #[serde(default)]
    pub text: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub id: Id,
    pub tokens: Vec<TokenId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub line: usize,
    pub id: Id,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PromptSet {
    pub prompts: Vec<Prompt>,
    pub rejected: Vec<Rejection>,
}

fn tokens_of(
    line: PromptLine,
    codec: Option<&TextCodec>,
) -> std::result::Result<(Id, Vec<TokenId>), String> {
    match (line.tokens, line.text) {
        (Some(t), None) => Ok((line.id, t)),
        (None, Some(text)) => match codec {
            Some(c) => Ok((line.id, c.encode(&text))),
            None => Err("text entries need a model with a text vocabulary".into()),
        },
        _ => Err("expected exactly one of \"tokens\" or \"text\"".into()),
    }
}

/// Reads every entry without length constraints, as for human reference continuations.
pub fn load_texts(path: &Path, codec: Option<&TextCodec>) -> Result<Vec<Prompt>> {
    let lines: Vec<PromptLine> = read_jsonl(path)?;
    lines
        .into_iter()
        .enumerate()
        .map(|(i, l)| {
            tokens_of(l, codec)
                .map(|(id, tokens)| Prompt { id, tokens })
                .map_err(|message| Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message,
                })
        })
        .collect()
}

/// Loads prompts cut to exactly `prompt_length` tokens; shorter ones are rejected and logged.
pub fn load_prompts(
    path: &Path,
    prompt_length: usize,
    codec: Option<&TextCodec>,
) -> Result<PromptSet> {
    if prompt_length == 0 {
        return Err(Error::InvalidInput(
            "prompt_length must be at least 1".into(),
        ));
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut set = PromptSet::default();
    for (i, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let line: PromptLine = serde_json::from_str(raw).map_err(|e| parse_err(e.to_string()))?;
        let (id, mut tokens) = tokens_of(line, codec).map_err(parse_err)?;
        if tokens.len() < prompt_length {
            let reason = format!("has {} tokens, needs {prompt_length}", tokens.len());
            log::warn!(
                "{}:{}: prompt {id} rejected: {reason}",
                path.display(),
                i + 1
            );
            set.rejected.push(Rejection {
                line: i + 1,
                id,
                reason,
            });
            continue;
        }
        tokens.truncate(prompt_length);
        set.prompts.push(Prompt { id, tokens });
    }
    if set.prompts.is_empty() && set.rejected.is_empty() {
        log::warn!("{}: no prompts found", path.display());
    }
    let mut seen = std::collections::HashSet::new();
    if let Some(dup) = set.prompts.iter().find(|p| !seen.insert(&p.id)) {
        return Err(Error::InvalidInput(format!(
            "{}: duplicate prompt id {}",
            path.display(),
            dup.id
        )));
    }
    Ok(set)
}
