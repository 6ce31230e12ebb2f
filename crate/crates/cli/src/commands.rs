// SPDX-License-Identifier: Apache-2.0

use std::io::Write;

use anyhow::Context as _;
use gbc_core::corpus::{self, map_lines, RunSummary};
use gbc_core::graph::{BBox, GbcGraph};
use gbc_core::io::{encode_plaintext, to_json_line};
use gbc_core::pipeline::{
    composition_hints, concat_bfs, exact_label_match, flatten_captions, merge_nodes, nms, select_boxes, DetectionBox,
    FilterPolicy, Plurality, Preset, SelectionRules, TypePolicy,
};
use gbc_core::stats::StatsConfig;
use gbc_core::t2imask::{build_negative_gbc, build_patch_prompt_mask, PatchGrid};
use gbc_core::{attention, loss};
use serde::Deserialize;
use serde_json::json;

use super::{open_input, open_output, usage, Command, Context};

pub(crate) fn dispatch(ctx: &Context, command: Command) -> anyhow::Result<u8> {
    match command {
        Command::Validate => validate(ctx),
        Command::Stats { top_k, bins } => stats(ctx, top_k, bins),
        Command::Filter { quantile, threshold } => filter(ctx, quantile, threshold),
        Command::Concat => per_graph(ctx, "concat", |g| {
            let text = concat_bfs(&g).map_err(|e| e.to_string())?;
            Ok(Some(json!({ "url": g.url, "caption": text }).to_string()))
        }),
        Command::Flatten { preset } => {
            let kinds = Preset::parse(&preset)
                .ok_or_else(|| usage(format!("unknown preset {preset:?}")))?
                .kinds();
            per_graph(ctx, "flatten", move |g| {
                let caps = flatten_captions(&g, &kinds).map_err(|e| e.to_string())?;
                let caps: Vec<_> = caps
                    .into_iter()
                    .map(|(node, c)| json!({ "node": node, "text": c.text, "type": c.kind, "clip_score": c.clip_score }))
                    .collect();
                Ok(Some(json!({ "url": g.url, "captions": caps }).to_string()))
            })
        }
        Command::Merge => per_graph(ctx, "merge", |g| {
            let out = merge_nodes(&g, exact_label_match).map_err(|e| e.to_string())?;
            for (a, b) in &out.skipped {
                log::info!("{}: kept {a} and {b} apart (one reaches the other)", g.url);
            }
            Ok(Some(to_json_line(&out.graph)))
        }),
        Command::Nms { iou } => {
            if let Some(t) = iou {
                if !(0.0..=1.0).contains(&t) {
                    return Err(usage(format!("--iou {t} outside [0,1]")));
                }
            }
            per_line(ctx, "nms", move |bytes| {
                let set: DetectionSet = serde_json::from_slice(bytes).map_err(|e| e.to_string())?;
                let kept = match iou {
                    Some(t) => nms(&set.boxes, t),
                    None => {
                        let (Some(w), Some(h)) = (set.width, set.height) else {
                            return Err("selection rules need \"width\" and \"height\"".into());
                        };
                        let plurality = set
                            .plurality
                            .or_else(|| set.boxes.first().map(|b| b.plurality))
                            .unwrap_or(Plurality::Single);
                        select_boxes(&set.boxes, plurality, (w, h), set.region.as_ref(), &SelectionRules::default())
                    }
                };
                Ok(Some(json!({ "boxes": kept }).to_string()))
            })
        }
        Command::Hints => {
            let seed = ctx.common.seed;
            per_line(ctx, "hints", move |bytes| {
                let set: DetectionSet = serde_json::from_slice(bytes).map_err(|e| e.to_string())?;
                let hints = composition_hints(&set.boxes, seed).map_err(|e| e.to_string())?;
                Ok(Some(serde_json::to_string(&hints).map_err(|e| e.to_string())?))
            })
        }
        Command::EncodeText { generation } => per_graph(ctx, "encode-text", move |g| {
            let text = encode_plaintext(&g, generation).map_err(|e| e.to_string())?;
            Ok(Some(json!({ "url": g.url, "text": text }).to_string()))
        }),
        Command::Mask { grid, emit } => {
            let grid = PatchGrid::parse(&grid).map_err(|e| usage(e.to_string()))?;
            let target = emit.unwrap_or_else(|| ctx.common.output.clone());
            let mut out = open_output(&target)?;
            let run = corpus::transform(ctx.reader()?, &mut out, &ctx.exec, ctx.common.batch, |g| {
                let view = g.generation_view();
                let m = build_patch_prompt_mask(&view, grid).map_err(|e| e.to_string())?;
                Ok(Some(json!({ "url": g.url, "grid": [m.grid.width, m.grid.height], "nodes": m.nodes, "mask": m.mask }).to_string()))
            })?;
            Ok(ctx.finish("mask", &run))
        }
        Command::Negative { base } => per_graph(ctx, "negative", move |g| {
            Ok(Some(to_json_line(build_negative_gbc(&g, &base).graph())))
        }),
        Command::SacaBench { sizes, len, dim, heads } => saca_bench(ctx, &sizes, len, dim, heads),
        Command::LossCheck => loss_check(ctx),
    }
}

#[derive(Debug, Deserialize)]
struct DetectionSet {
    boxes: Vec<DetectionBox>,
    #[serde(default)]
    width: Option<u32>,
    #[serde(default)]
    height: Option<u32>,
    #[serde(default)]
    region: Option<BBox>,
    #[serde(default)]
    plurality: Option<Plurality>,
}

fn per_graph<F>(ctx: &Context, what: &str, f: F) -> anyhow::Result<u8>
where
    F: Fn(GbcGraph) -> Result<Option<String>, String> + Sync + Send,
{
    let mut out = ctx.writer()?;
    let run = corpus::transform(ctx.reader()?, &mut out, &ctx.exec, ctx.common.batch, f)?;
    Ok(ctx.finish(what, &run))
}

fn per_line<F>(ctx: &Context, what: &str, f: F) -> anyhow::Result<u8>
where
    F: Fn(&[u8]) -> Result<Option<String>, String> + Sync + Send,
{
    let mut out = ctx.writer()?;
    let mut run = RunSummary::default();
    let mut failures = Vec::new();
    map_lines(
        ctx.reader()?,
        &ctx.exec,
        ctx.common.batch,
        |_, bytes| f(bytes),
        |line, r| {
            run.records += 1;
            match r {
                Ok(Some(text)) => writeln!(out, "{text}")?,
                Ok(None) => {}
                Err(msg) => {
                    log::warn!("line {line}: {msg}");
                    failures.push(corpus::RecordError { line, message: msg });
                }
            }
            Ok(())
        },
    )?;
    out.flush()?;
    run.errors = failures;
    Ok(ctx.finish(what, &run))
}

fn validate(ctx: &Context) -> anyhow::Result<u8> {
    let mut out = ctx.writer()?;
    let (summary, run) = corpus::validate_corpus(ctx.reader()?, &mut out, &ctx.exec, ctx.common.batch)?;
    eprintln!(
        "{} records, {} invalid, {} unreadable, {} violations",
        summary.records, summary.invalid, summary.parse_errors, summary.violations
    );
    Ok(u8::from(ctx.common.strict && !run.errors.is_empty()))
}

fn stats(ctx: &Context, top_k: usize, bins: usize) -> anyhow::Result<u8> {
    if bins == 0 {
        return Err(usage("--bins must be positive"));
    }
    let config = StatsConfig {
        bins,
        top_k,
        tokenizer: ctx.tokenizer.id().to_string(),
    };
    let (report, run) =
        corpus::stats_corpus(ctx.reader()?, &ctx.exec, ctx.common.batch, ctx.tokenizer.as_ref(), &config)?;
    let mut out = ctx.writer()?;
    out.write_all(report.to_json_string().as_bytes())?;
    out.flush()?;
    if report.skipped > 0 {
        eprintln!("stats: skipped {} invalid records", report.skipped);
    }
    let strict_fail = ctx.common.strict && report.skipped > 0;
    Ok(ctx.finish("stats", &run).max(u8::from(strict_fail)))
}

fn filter(ctx: &Context, quantile: f64, threshold: Option<f64>) -> anyhow::Result<u8> {
    if super::is_std(&ctx.common.input) {
        return Err(usage("filter reads its input twice; pass --input FILE"));
    }
    let policy = match threshold {
        Some(t) if t.is_finite() => FilterPolicy {
            default: TypePolicy::Absolute(t),
            ..FilterPolicy::default()
        },
        Some(t) => return Err(usage(format!("--threshold {t} is not finite"))),
        None if (0.0..=1.0).contains(&quantile) => FilterPolicy::quantile(quantile),
        None => return Err(usage(format!("--quantile {quantile} outside [0,1]"))),
    };
    let mut out = ctx.writer()?;
    let path = ctx.common.input.clone();
    let (thresholds, run) = corpus::filter_corpus(
        || {
            open_input(&path).map_err(|e| std::io::Error::other(e.to_string()))
        },
        &mut out,
        &ctx.exec,
        ctx.common.batch,
        &policy,
    )?;
    for (k, t) in &thresholds.0 {
        log::info!("threshold {}: {t}", k.as_str());
    }
    Ok(ctx.finish("filter", &run))
}

fn saca_bench(ctx: &Context, sizes: &[usize], len: usize, dim: usize, heads: usize) -> anyhow::Result<u8> {
    if sizes.is_empty() || sizes.contains(&0) || len == 0 {
        return Err(usage("--sizes and --len must be positive"));
    }
    if heads == 0 || !dim.is_multiple_of(heads) {
        return Err(usage(format!("--dim {dim} is not divisible by --heads {heads}")));
    }
    let rows = ctx
        .exec
        .install(|| attention::complexity_probe(sizes, len, dim, heads, ctx.common.seed))
        .context("complexity probe")?;
    let mut out = ctx.writer()?;
    writeln!(out, "captions,count,comparator")?;
    for r in rows {
        writeln!(out, "{},{},{}", r.captions, r.count, r.comparator)?;
    }
    out.flush()?;
    Ok(0)
}

fn loss_check(ctx: &Context) -> anyhow::Result<u8> {
    let results = ctx.exec.install(|| loss::self_check(ctx.common.seed))?;
    let mut out = ctx.writer()?;
    let mut failed = 0;
    for r in &results {
        let tag = if r.passed { "PASS" } else { "FAIL" };
        writeln!(out, "{tag} {} ({})", r.name, r.detail)?;
        failed += usize::from(!r.passed);
    }
    out.flush()?;
    Ok(u8::from(failed > 0))
}
