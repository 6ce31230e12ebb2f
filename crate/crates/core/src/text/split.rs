// SPDX-License-Identifier: Apache-2.0

use crate::graph::Caption;

use super::Tokenizer;

/// Token budget of a text-encoder context, summary marker excluded.
pub const MAX_TOKENS: usize = 77;

/// Splits text after every `.`, `!` or `?` that is followed by whitespace.
/// The whitespace stays with the preceding sentence, so the pieces
/// concatenate back to the input.
pub fn split_sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((_, ch)) = chars.next() {
        if !matches!(ch, '.' | '!' | '?') {
            continue;
        }
        if !chars.peek().is_some_and(|(_, c)| c.is_whitespace()) {
            continue;
        }
        let mut end = text.len();
        while let Some(&(j, c)) = chars.peek() {
            if !c.is_whitespace() {
                end = j;
                break;
            }
            chars.next();
        }
        out.push(&text[start..end]);
        start = end;
    }
    if start < text.len() {
        out.push(&text[start..]);
    }
    out
}

/// Fits a caption into [`MAX_TOKENS`]-token pieces made of whole sentences.
///
/// Short captions come back unchanged. Longer ones are split into greedy
/// maximal runs of consecutive sentences. If any single sentence is over the
/// budget the caption is dropped and the result is empty.
pub fn split_caption_77(caption: &Caption, tokenizer: &dyn Tokenizer) -> Vec<Caption> {
    if tokenizer.count(&caption.text) <= MAX_TOKENS {
        return vec![caption.clone()];
    }
    let sentences = split_sentences(&caption.text);
    let counts: Vec<usize> = sentences.iter().map(|s| tokenizer.count(s)).collect();
    if counts.iter().any(|&c| c > MAX_TOKENS) {
        return Vec::new();
    }
    let mut out = Vec::new();
    let mut piece = String::new();
    let mut used = 0;
    for (s, c) in sentences.iter().zip(counts) {
        if used + c > MAX_TOKENS && !piece.is_empty() {
            out.push(Caption {
                text: std::mem::take(&mut piece),
                ..caption.clone()
            });
            used = 0;
        }
        piece.push_str(s);
        used += c;
    }
    if !piece.is_empty() {
        out.push(Caption {
            text: piece,
            ..caption.clone()
        });
    }
    out
}
