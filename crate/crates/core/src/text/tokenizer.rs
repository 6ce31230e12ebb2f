// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeSet;
use std::ops::Range;

use crate::error::{GbcError, Result};
use crate::normalize;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    /// Byte span in the source string.
    pub span: Range<usize>,
}

/// Tokens of one caption. A virtual summary token follows the real tokens:
/// it has index `real_len()` and no span.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSeq {
    pub tokens: Vec<Token>,
}

impl TokenSeq {
    /// Number of positions including the summary marker.
    pub fn len(&self) -> usize {
        self.tokens.len() + 1
    }

    /// Never true: the summary marker is always present.
    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn real_len(&self) -> usize {
        self.tokens.len()
    }

    pub fn summary_index(&self) -> usize {
        self.tokens.len()
    }

    /// Indices of the real tokens whose spans overlap `range`.
    pub fn covering(&self, range: &Range<usize>) -> impl Iterator<Item = usize> + '_ {
        let range = range.clone();
        self.tokens
            .iter()
            .enumerate()
            .filter(move |(_, t)| t.span.start < range.end && range.start < t.span.end)
            .map(|(i, _)| i)
    }
}

/// Sorted set of token indices into a [`TokenSeq`]; never contains the
/// summary position.
pub type TokenSpanSet = BTreeSet<usize>;

pub trait Tokenizer: Send + Sync {
    fn id(&self) -> &str;
    fn tokenize(&self, text: &str) -> TokenSeq;

    fn count(&self, text: &str) -> usize {
        self.tokenize(text).real_len()
    }
}

/// Lowercases, splits on whitespace, and separates every non-alphanumeric
/// character into its own token.
#[derive(Debug, Clone, Copy, Default)]
pub struct ReferenceTokenizer;

impl Tokenizer for ReferenceTokenizer {
    fn id(&self) -> &str {
        "reference"
    }

    fn tokenize(&self, text: &str) -> TokenSeq {
        let mut tokens = Vec::new();
        let mut word: Option<usize> = None;
        let flush = |tokens: &mut Vec<Token>, start: usize, end: usize| {
            tokens.push(Token {
                text: text[start..end].to_lowercase(),
                span: start..end,
            });
        };
        for (i, ch) in text.char_indices() {
            if ch.is_alphanumeric() {
                word.get_or_insert(i);
                continue;
            }
            if let Some(s) = word.take() {
                flush(&mut tokens, s, i);
            }
            if !ch.is_whitespace() {
                flush(&mut tokens, i, i + ch.len_utf8());
            }
        }
        if let Some(s) = word {
            flush(&mut tokens, s, text.len());
        }
        TokenSeq { tokens }
    }
}

/// Resolves a CLI tokenizer id.
pub fn tokenizer_by_id(id: &str) -> Option<Box<dyn Tokenizer>> {
    match id {
        "reference" => Some(Box::new(ReferenceTokenizer)),
        _ => None,
    }
}

/// Token positions in `caption` covered by any occurrence of `label`.
///
/// Occurrences are found with the same folding as the edge-label witness
/// rule, so a label that witnesses an edge always resolves.
pub fn edge_token_positions(tokenizer: &dyn Tokenizer, caption: &str, label: &str) -> Result<TokenSpanSet> {
    let hits = normalize::find_label(caption, label);
    let seq = tokenizer.tokenize(caption);
    let set: TokenSpanSet = hits.iter().flat_map(|r| seq.covering(r).collect::<Vec<_>>()).collect();
    if set.is_empty() {
        return Err(GbcError::LabelNotFound {
            label: label.to_string(),
            caption: caption.to_string(),
        });
    }
    Ok(set)
}
