// SPDX-License-Identifier: Apache-2.0

//! Streaming corpus driver.
//!
//! Lines are read in batches; each batch is decoded and processed on the
//! executor, and results are handed to a sink in input order. Memory use is
//! bounded by the batch size, and output never depends on the job count.

use std::io::{self, BufRead, Write};

use serde::Serialize;
use serde_json::json;

use crate::error::{GbcError, Result};
use crate::graph::GbcGraph;
use crate::io::{parse_record, to_json_line, JsonlReader, ParseError, ParseErrorKind};
use crate::par::Executor;
use crate::pipeline::{filter_graph, resolve_thresholds, FilterPolicy, ScoreCollector, Thresholds};
use crate::stats::{StatsConfig, StatsReport};
use crate::text::Tokenizer;
use crate::validate::validate;

pub const DEFAULT_BATCH: usize = 1024;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RecordError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct RunSummary {
    pub records: usize,
    pub errors: Vec<RecordError>,
}

impl RunSummary {
    fn fail(&mut self, line: usize, message: impl Into<String>) {
        let message = message.into();
        log::warn!("line {line}: {message}");
        self.errors.push(RecordError { line, message });
    }
}

fn fatal(e: ParseError) -> GbcError {
    GbcError::Io(io::Error::other(e.to_string()))
}

/// Reads raw lines in batches of `batch` and calls `f` on each batch.
fn for_each_batch<R: BufRead>(
    reader: R,
    batch: usize,
    mut f: impl FnMut(Vec<(usize, Vec<u8>)>) -> Result<()>,
) -> Result<()> {
    let mut lines = JsonlReader::new(reader);
    let mut buf = Vec::with_capacity(batch);
    while let Some(item) = lines.next_raw() {
        match item {
            Ok(raw) => buf.push(raw),
            Err(e) if e.kind == ParseErrorKind::Io => return Err(fatal(e)),
            Err(e) => return Err(GbcError::InvalidGraph(e.to_string())),
        }
        if buf.len() >= batch.max(1) {
            f(std::mem::take(&mut buf))?;
        }
    }
    if !buf.is_empty() {
        f(buf)?;
    }
    Ok(())
}

/// Maps every non-blank raw line on the executor; `sink` sees results in
/// input order.
pub fn map_lines<R, T, F, S>(reader: R, exec: &Executor, batch: usize, f: F, mut sink: S) -> Result<()>
where
    R: BufRead,
    T: Send,
    F: Fn(usize, &[u8]) -> T + Sync + Send,
    S: FnMut(usize, T) -> Result<()>,
{
    for_each_batch(reader, batch, |raw| {
        let results = exec.map(&raw, |(line, bytes)| f(*line, bytes));
        for ((line, _), r) in raw.iter().zip(results) {
            sink(*line, r)?;
        }
        Ok(())
    })
}

/// [`map_lines`] with each line decoded as a graph first.
pub fn map_records<R, T, F, S>(reader: R, exec: &Executor, batch: usize, f: F, sink: S) -> Result<()>
where
    R: BufRead,
    T: Send,
    F: Fn(usize, std::result::Result<GbcGraph, ParseError>) -> T + Sync + Send,
    S: FnMut(usize, T) -> Result<()>,
{
    map_lines(reader, exec, batch, |line, bytes| f(line, parse_record(line, bytes)), sink)
}

/// Applies a per-record transform and writes one output line per success.
/// `f` returns the text to write (without newline), `None` to write
/// nothing, or an error message.
pub fn transform<R, W, F>(reader: R, out: &mut W, exec: &Executor, batch: usize, f: F) -> Result<RunSummary>
where
    R: BufRead,
    W: Write,
    F: Fn(GbcGraph) -> std::result::Result<Option<String>, String> + Sync + Send,
{
    let mut summary = RunSummary::default();
    map_records(
        reader,
        exec,
        batch,
        |_, parsed| match parsed {
            Ok(g) => f(g),
            Err(e) => Err(e.to_string()),
        },
        |line, r| {
            summary.records += 1;
            match r {
                Ok(Some(text)) => {
                    out.write_all(text.as_bytes())?;
                    out.write_all(b"\n")?;
                }
                Ok(None) => {}
                Err(msg) => summary.fail(line, msg),
            }
            Ok(())
        },
    )?;
    out.flush()?;
    Ok(summary)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidateSummary {
    pub records: usize,
    pub invalid: usize,
    pub violations: usize,
    pub parse_errors: usize,
}

/// Writes one JSON line per invalid or unreadable record.
pub fn validate_corpus<R: BufRead, W: Write>(
    reader: R,
    out: &mut W,
    exec: &Executor,
    batch: usize,
) -> Result<(ValidateSummary, RunSummary)> {
    let mut vs = ValidateSummary::default();
    let mut run = RunSummary::default();
    map_records(
        reader,
        exec,
        batch,
        |_, parsed| parsed.map(|g| validate(&g)),
        |line, r| {
            vs.records += 1;
            run.records += 1;
            match r {
                Ok(report) if report.ok => {}
                Ok(report) => {
                    vs.invalid += 1;
                    vs.violations += report.violations.len();
                    let v = json!({ "line": line, "ok": false, "violations": report.violations });
                    writeln!(out, "{v}")?;
                    run.fail(line, report.summary());
                }
                Err(e) => {
                    vs.parse_errors += 1;
                    let v = json!({ "line": line, "ok": false, "error": e.to_string() });
                    writeln!(out, "{v}")?;
                    run.fail(line, e.to_string());
                }
            }
            Ok(())
        },
    )?;
    out.flush()?;
    Ok((vs, run))
}

/// Splits a batch into roughly `4 * jobs` contiguous chunks.
fn chunk_len(len: usize, jobs: usize) -> usize {
    len.div_ceil(4 * jobs.max(1)).max(1)
}

pub fn stats_corpus<R: BufRead>(
    reader: R,
    exec: &Executor,
    batch: usize,
    tokenizer: &dyn Tokenizer,
    config: &StatsConfig,
) -> Result<(StatsReport, RunSummary)> {
    if tokenizer.id() != config.tokenizer {
        return Err(GbcError::ConfigMismatch(format!(
            "tokenizer {} but config names {}",
            tokenizer.id(),
            config.tokenizer
        )));
    }
    let mut report = StatsReport::new(config.clone());
    let mut run = RunSummary::default();
    for_each_batch(reader, batch, |raw| {
        let chunks: Vec<&[(usize, Vec<u8>)]> = raw.chunks(chunk_len(raw.len(), exec.jobs())).collect();
        let partial = exec.map(&chunks, |chunk| {
            let mut r = StatsReport::new(config.clone());
            let mut errors = Vec::new();
            for (line, bytes) in chunk.iter() {
                match parse_record(*line, bytes) {
                    Ok(g) => r.add(&g, tokenizer),
                    Err(e) => errors.push((*line, e.to_string())),
                }
            }
            (r, errors)
        });
        run.records += raw.len();
        for (r, errors) in partial {
            report.absorb(&r)?;
            for (line, msg) in errors {
                run.fail(line, msg);
            }
        }
        Ok(())
    })?;
    Ok((report, run))
}

/// Two passes: collect scores and resolve thresholds, then filter and write.
pub fn filter_corpus<R, O, W>(
    open: O,
    out: &mut W,
    exec: &Executor,
    batch: usize,
    policy: &FilterPolicy,
) -> Result<(Thresholds, RunSummary)>
where
    R: BufRead,
    O: Fn() -> io::Result<R>,
    W: Write,
{
    policy.check()?;
    let mut scores = ScoreCollector::default();
    for_each_batch(open()?, batch, |raw| {
        let chunks: Vec<&[(usize, Vec<u8>)]> = raw.chunks(chunk_len(raw.len(), exec.jobs())).collect();
        let partial = exec.map(&chunks, |chunk| {
            let mut c = ScoreCollector::default();
            for (line, bytes) in chunk.iter() {
                if let Ok(g) = parse_record(*line, bytes) {
                    if validate(&g).ok {
                        c.add_graph(&g);
                    }
                }
            }
            c
        });
        for c in partial {
            scores.merge(c);
        }
        Ok(())
    })?;
    let thresholds = resolve_thresholds(&scores, policy);
    log::info!("resolved thresholds: {:?}", thresholds.0);
    let run = transform(open()?, out, exec, batch, |g| {
        filter_graph(&g, &thresholds)
            .map(|f| Some(to_json_line(&f)))
            .map_err(|e| e.to_string())
    })?;
    Ok((thresholds, run))
}
