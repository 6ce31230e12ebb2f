// SPDX-License-Identifier: Apache-2.0

//! Text folding shared by the edge-label witness check and label span lookup.
//!
//! Folding applies NFC, lowercases, trims and collapses whitespace runs into a
//! single ASCII space. [`fold_with_offsets`] additionally reports, for every
//! byte of the folded string, the byte range of the source text it came from.

use std::ops::Range;

use unicode_normalization::{is_nfc_quick, IsNormalized, UnicodeNormalization};

pub fn fold(text: &str) -> String {
    fold_with_offsets(text).0
}

/// Case-insensitive, whitespace-insensitive substring test.
pub fn contains_label(haystack: &str, label: &str) -> bool {
    let needle = fold(label);
    !needle.is_empty() && fold(haystack).contains(&needle)
}

/// Folded text plus a source byte range for every folded byte.
///
/// Characters that are already NFC map one-to-one. Non-NFC words are composed
/// as a unit and every byte they produce maps to the whole source word.
pub fn fold_with_offsets(text: &str) -> (String, Vec<Range<usize>>) {
    let mut out = String::with_capacity(text.len());
    let mut origin: Vec<Range<usize>> = Vec::with_capacity(text.len());
    let mut words = split_words(text).peekable();
    while let Some(word) = words.next() {
        let src = &text[word.clone()];
        if matches!(is_nfc_quick(src.chars()), IsNormalized::Yes) {
            for (off, ch) in src.char_indices() {
                let r = word.start + off..word.start + off + ch.len_utf8();
                for lc in ch.to_lowercase() {
                    push_char(&mut out, &mut origin, lc, r.clone());
                }
            }
        } else {
            for ch in src.nfc() {
                for lc in ch.to_lowercase() {
                    push_char(&mut out, &mut origin, lc, word.clone());
                }
            }
        }
        if words.peek().is_some() {
            push_char(&mut out, &mut origin, ' ', word.end..word.end);
        }
    }
    (out, origin)
}

fn push_char(out: &mut String, origin: &mut Vec<Range<usize>>, ch: char, src: Range<usize>) {
    out.push(ch);
    for _ in 0..ch.len_utf8() {
        origin.push(src.clone());
    }
}

fn split_words(text: &str) -> impl Iterator<Item = Range<usize>> + '_ {
    let mut start: Option<usize> = None;
    let mut iter = text.char_indices().chain(std::iter::once((text.len(), ' ')));
    std::iter::from_fn(move || {
        for (i, ch) in iter.by_ref() {
            match (ch.is_whitespace(), start) {
                (true, Some(s)) => {
                    start = None;
                    return Some(s..i);
                }
                (false, None) => start = Some(i),
                _ => {}
            }
        }
        None
    })
}

/// Source byte ranges of every occurrence of `label` in `text` under folding.
pub fn find_label(text: &str, label: &str) -> Vec<Range<usize>> {
    let needle = fold(label);
    if needle.is_empty() {
        return Vec::new();
    }
    let (folded, origin) = fold_with_offsets(text);
    let mut hits = Vec::new();
    let mut from = 0;
    while let Some(pos) = folded[from..].find(&needle) {
        let a = from + pos;
        let b = a + needle.len();
        hits.push(origin[a].start..origin[b - 1].end);
        // advance one char so overlapping occurrences are found
        from = a + folded[a..].chars().next().map_or(1, char::len_utf8);
    }
    hits
}
