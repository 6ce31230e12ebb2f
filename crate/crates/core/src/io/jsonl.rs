// SPDX-License-Identifier: Apache-2.0

//! One [`GbcGraph`] per line:
//!
//! ```text
//! {"url":..,"width":..,"height":..,
//!  "nodes":[{"id":..,"type":"image|entity|composition|relation","bbox":[x1,y1,x2,y2],
//!            "captions":[{"text":..,"type":..,"clip_score":number|null}]}],
//!  "edges":[{"source":..,"target":..,"label":..}]}
//! ```

use std::fmt;
use std::io::{BufRead, Write};

use crate::graph::GbcGraph;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseErrorKind {
    Io,
    Utf8,
    Json,
    Schema,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseError {
    /// 1-based line number.
    pub line: usize,
    pub kind: ParseErrorKind,
    pub message: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {:?} error: {}", self.line, self.kind, self.message)
    }
}

impl std::error::Error for ParseError {}

/// Decodes one line (without its terminator).
pub fn parse_record(line: usize, bytes: &[u8]) -> Result<GbcGraph, ParseError> {
    let text = std::str::from_utf8(bytes).map_err(|e| ParseError {
        line,
        kind: ParseErrorKind::Utf8,
        message: e.to_string(),
    })?;
    serde_json::from_str(text).map_err(|e| {
        use serde_json::error::Category;
        let kind = match e.classify() {
            Category::Data => ParseErrorKind::Schema,
            Category::Io => ParseErrorKind::Io,
            Category::Syntax | Category::Eof => ParseErrorKind::Json,
        };
        ParseError {
            line,
            kind,
            message: e.to_string(),
        }
    })
}

/// Streaming reader; holds one line in memory at a time. Blank lines are
/// skipped but still counted.
pub struct JsonlReader<R> {
    inner: R,
    line: usize,
    buf: Vec<u8>,
    done: bool,
}

impl<R: BufRead> JsonlReader<R> {
    pub fn new(inner: R) -> Self {
        JsonlReader {
            inner,
            line: 0,
            buf: Vec::new(),
            done: false,
        }
    }

    /// Next non-blank raw line as `(line number, bytes)`.
    pub fn next_raw(&mut self) -> Option<Result<(usize, Vec<u8>), ParseError>> {
        loop {
            if self.done {
                return None;
            }
            self.buf.clear();
            match self.inner.read_until(b'\n', &mut self.buf) {
                Ok(0) => {
                    self.done = true;
                    return None;
                }
                Ok(_) => {
                    self.line += 1;
                    let mut end = self.buf.len();
                    while end > 0 && matches!(self.buf[end - 1], b'\n' | b'\r') {
                        end -= 1;
                    }
                    if self.buf[..end].iter().all(u8::is_ascii_whitespace) {
                        continue;
                    }
                    return Some(Ok((self.line, self.buf[..end].to_vec())));
                }
                Err(e) => {
                    self.done = true;
                    return Some(Err(ParseError {
                        line: self.line + 1,
                        kind: ParseErrorKind::Io,
                        message: e.to_string(),
                    }));
                }
            }
        }
    }
}

impl<R: BufRead> Iterator for JsonlReader<R> {
    type Item = (usize, Result<GbcGraph, ParseError>);

    fn next(&mut self) -> Option<Self::Item> {
        match self.next_raw()? {
            Ok((line, bytes)) => Some((line, parse_record(line, &bytes))),
            Err(e) => Some((e.line, Err(e))),
        }
    }
}

pub fn parse_jsonl<R: BufRead>(reader: R) -> JsonlReader<R> {
    JsonlReader::new(reader)
}

pub fn to_json_line(graph: &GbcGraph) -> String {
    serde_json::to_string(graph).expect("graph serialization is infallible")
}

/// Writes one line per graph and returns the number written.
pub fn write_jsonl<'a, I, W>(graphs: I, mut sink: W) -> std::io::Result<usize>
where
    I: IntoIterator<Item = &'a GbcGraph>,
    W: Write,
{
    let mut n = 0;
    for g in graphs {
        serde_json::to_writer(&mut sink, g)?;
        sink.write_all(b"\n")?;
        n += 1;
    }
    sink.flush()?;
    Ok(n)
}
