// SPDX-License-Identifier: Apache-2.0

//! `gbc`: streaming command-line tools for graph-based caption corpora.

mod commands;

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gbc_core::corpus::{RunSummary, DEFAULT_BATCH};
use gbc_core::par::Executor;
use gbc_core::text::{tokenizer_by_id, Tokenizer};

#[derive(Debug, Parser)]
#[command(name = "gbc", version, about = "Tools for graph-based caption (GBC) corpora")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Input JSONL file, `-` for stdin.
    #[arg(long, global = true, default_value = "-")]
    input: PathBuf,
    /// Output file, `-` for stdout.
    #[arg(long, global = true, default_value = "-", visible_alias = "out")]
    output: PathBuf,
    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true, value_parser = clap::value_parser!(u16).range(1..))]
    jobs: Option<u16>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[arg(long, global = true, default_value = "reference")]
    tokenizer: String,
    /// Fail (exit 1) when any record cannot be processed.
    #[arg(long, global = true)]
    strict: bool,
    /// Records per processing batch.
    #[arg(long, global = true, default_value_t = DEFAULT_BATCH, hide = true)]
    batch: usize,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check every record against the graph invariants.
    Validate,
    /// Corpus statistics as JSON.
    Stats {
        #[arg(long, default_value_t = gbc_core::stats::DEFAULT_TOP_K)]
        top_k: usize,
        #[arg(long, default_value_t = gbc_core::stats::DEFAULT_BINS)]
        bins: usize,
    },
    /// Drop low-scoring captions while keeping every graph valid.
    Filter {
        /// Per-type fraction of scored captions to drop.
        #[arg(long, default_value_t = 0.05, conflicts_with = "threshold")]
        quantile: f64,
        /// Absolute score threshold for every caption type.
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// One breadth-first concatenated caption per record.
    Concat,
    /// Every caption of the selected kinds as an independent text.
    Flatten {
        #[arg(long, default_value = "all", value_parser = ["all", "region", "relational"])]
        preset: String,
    },
    /// Merge entity nodes that describe the same object.
    Merge,
    /// Non-maximum suppression over detection sets.
    Nms {
        /// Plain greedy NMS at this IoU; without it the full selection rules apply.
        #[arg(long)]
        iou: Option<f64>,
    },
    /// Spatial hints for groups of same-label boxes.
    Hints,
    /// Plain-text node encoding of each record.
    EncodeText {
        /// Drop relation nodes and composition captions first.
        #[arg(long)]
        generation: bool,
    },
    /// Patch-to-prompt attention masks.
    Mask {
        #[arg(long, default_value = "32x32")]
        grid: String,
        /// Mask file (defaults to --output).
        #[arg(long)]
        emit: Option<PathBuf>,
    },
    /// Negative graphs for guidance.
    Negative {
        #[arg(long, default_value = gbc_core::t2imask::DEFAULT_NEGATIVE)]
        base: String,
    },
    /// Score counts of the structure-aware attention against full attention.
    SacaBench {
        #[arg(long, default_value = "2,4,8,16,32", value_delimiter = ',')]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 16)]
        len: usize,
        #[arg(long, default_value_t = 32)]
        dim: usize,
        #[arg(long, default_value_t = 4)]
        heads: usize,
    },
    /// Gradient and property checks of the contrastive losses.
    LossCheck,
}

/// Bad invocation: reported with exit status 2.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn is_std(p: &Path) -> bool {
    p.as_os_str() == "-"
}

fn same_file(a: &Path, b: &Path) -> bool {
    if is_std(a) || is_std(b) {
        return false;
    }
    match (a.canonicalize(), b.canonicalize()) {
        (Ok(x), Ok(y)) => x == y,
        _ => a == b,
    }
}

struct Context {
    common: Common,
    exec: Executor,
    tokenizer: Box<dyn Tokenizer>,
}

impl Context {
    fn reader(&self) -> anyhow::Result<Box<dyn BufRead>> {
        open_input(&self.common.input)
    }

    fn writer(&self) -> anyhow::Result<Box<dyn Write>> {
        open_output(&self.common.output)
    }

    /// Logs the record errors and turns them into the exit status.
    fn finish(&self, what: &str, run: &RunSummary) -> u8 {
        let failed = run.errors.len();
        log::info!("{what}: {} records, {failed} failed", run.records);
        if failed > 0 {
            eprintln!("{what}: {failed} of {} records failed", run.records);
        }
        u8::from(self.common.strict && failed > 0)
    }
}

fn open_input(p: &Path) -> anyhow::Result<Box<dyn BufRead>> {
    if is_std(p) {
        Ok(Box::new(BufReader::new(io::stdin())))
    } else {
        let f = File::open(p).map_err(|e| anyhow::anyhow!("cannot open {}: {e}", p.display()))?;
        Ok(Box::new(BufReader::with_capacity(1 << 16, f)))
    }
}

fn open_output(p: &Path) -> anyhow::Result<Box<dyn Write>> {
    if is_std(p) {
        Ok(Box::new(BufWriter::new(io::stdout())))
    } else {
        let f = File::create(p).map_err(|e| anyhow::anyhow!("cannot create {}: {e}", p.display()))?;
        Ok(Box::new(BufWriter::with_capacity(1 << 16, f)))
    }
}

fn run(cli: Cli) -> anyhow::Result<u8> {
    let common = cli.common;
    if same_file(&common.input, &common.output) {
        return Err(usage("--input and --output name the same file"));
    }
    if let Command::Mask { emit: Some(e), .. } = &cli.command {
        if same_file(&common.input, e) {
            return Err(usage("--input and --emit name the same file"));
        }
    }
    let tokenizer =
        tokenizer_by_id(&common.tokenizer).ok_or_else(|| usage(format!("unknown tokenizer {:?}", common.tokenizer)))?;
    let exec = Executor::new(common.jobs.map_or(0, usize::from))?;
    log::debug!("running with {} worker(s)", exec.jobs());
    let ctx = Context {
        common,
        exec,
        tokenizer,
    };
    commands::dispatch(&ctx, cli.command)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("GBC_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) if e.is::<UsageError>() => {
            eprintln!("gbc: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("gbc: {e:#}");
            ExitCode::from(1)
        }
    }
}
