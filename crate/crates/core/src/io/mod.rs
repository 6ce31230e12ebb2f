// SPDX-License-Identifier: Apache-2.0

//! Corpus and prompt serialization.

mod jsonl;
mod plaintext;

pub use jsonl::{parse_jsonl, parse_record, to_json_line, write_jsonl, JsonlReader, ParseError, ParseErrorKind};
pub use plaintext::{encode_plaintext, parse_plaintext};
