// SPDX-License-Identifier: Apache-2.0

//! Tokenization and caption-level structure.

mod caption_graph;
mod split;
mod tokenizer;

pub use caption_graph::{build_caption_graph, CaptionEdge, CaptionGraph, CaptionVertex};
pub use split::{split_caption_77, split_sentences, MAX_TOKENS};
pub use tokenizer::{
    edge_token_positions, tokenizer_by_id, ReferenceTokenizer, Token, TokenSeq, TokenSpanSet, Tokenizer,
};
