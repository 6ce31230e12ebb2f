// SPDX-License-Identifier: Apache-2.0

//! Corpus statistics as a mergeable accumulator.
//!
//! Every real-valued sum is kept in fixed point (2^-32 resolution), so
//! merging shard reports gives bit-identical results to a single pass in any
//! order. Word counts split on whitespace; token counts use the configured
//! tokenizer.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::dag;
use crate::error::{GbcError, Result};
use crate::graph::{CaptionType, GbcGraph, NodeType};
use crate::text::Tokenizer;
use crate::validate::validate;

const FIXED_SCALE: f64 = 4_294_967_296.0;

pub const DEFAULT_BINS: usize = 64;
pub const DEFAULT_TOP_K: usize = 20;

/// Names of the headline per-image averages in the rendered report.
pub const TABLE1_FIELDS: [&str; 5] = [
    "# Vertices / Image",
    "# Edges / Image",
    "# Captions / Image",
    "# Words / Image",
    "Average Graph Diameter",
];

/// English stop words dropped from the word ranking.
pub const STOP_WORDS: &[&str] = &[
    "a", "about", "above", "after", "again", "against", "all", "also", "am", "an", "and", "any", "are", "as", "at",
    "be", "because", "been", "before", "being", "below", "between", "both", "but", "by", "can", "could", "did", "do",
    "does", "doing", "down", "during", "each", "few", "for", "from", "further", "had", "has", "have", "having", "he",
    "her", "here", "hers", "herself", "him", "himself", "his", "how", "i", "if", "in", "into", "is", "it", "its",
    "itself", "just", "me", "more", "most", "my", "myself", "no", "nor", "not", "of", "off", "on", "once", "only",
    "or", "other", "our", "ours", "ourselves", "out", "over", "own", "same", "she", "should", "so", "some", "such",
    "than", "that", "the", "their", "theirs", "them", "themselves", "then", "there", "these", "they", "this",
    "those", "through", "to", "too", "under", "until", "up", "very", "was", "we", "were", "what", "when", "where",
    "which", "while", "who", "whom", "why", "will", "with", "would", "you", "your", "yours", "yourself",
    "yourselves",
];

pub fn is_stop_word(w: &str) -> bool {
    STOP_WORDS.binary_search(&w).is_ok()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatsConfig {
    pub bins: usize,
    pub top_k: usize,
    pub tokenizer: String,
}

impl Default for StatsConfig {
    fn default() -> Self {
        StatsConfig {
            bins: DEFAULT_BINS,
            top_k: DEFAULT_TOP_K,
            tokenizer: "reference".into(),
        }
    }
}

/// Uniform bins on `[lo, hi]` plus one overflow bin for values above `hi`.
/// Values below `lo` land in the first bin.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
    pub overflow: u64,
}

impl Histogram {
    fn new(lo: f64, hi: f64, bins: usize) -> Self {
        Histogram {
            lo,
            hi,
            counts: vec![0; bins],
            overflow: 0,
        }
    }

    fn add(&mut self, v: f64) {
        if v > self.hi {
            self.overflow += 1;
            return;
        }
        let bins = self.counts.len();
        let pos = ((v - self.lo) / (self.hi - self.lo) * bins as f64).floor();
        let b = if pos < 0.0 { 0 } else { (pos as usize).min(bins - 1) };
        self.counts[b] += 1;
    }

    fn merge(&mut self, other: &Histogram) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.overflow += other.overflow;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metric {
    pub count: u64,
    sum: i128,
    pub hist: Histogram,
}

impl Metric {
    fn new(lo: f64, hi: f64, bins: usize) -> Self {
        Metric {
            count: 0,
            sum: 0,
            hist: Histogram::new(lo, hi, bins),
        }
    }

    pub fn add(&mut self, v: f64) {
        self.count += 1;
        self.sum += (v * FIXED_SCALE).round() as i128;
        self.hist.add(v);
    }

    pub fn sum(&self) -> f64 {
        self.sum as f64 / FIXED_SCALE
    }

    pub fn mean(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.sum() / self.count as f64
        }
    }

    fn merge(&mut self, other: &Metric) {
        self.count += other.count;
        self.sum += other.sum;
        self.hist.merge(&other.hist);
    }

    fn to_json(&self) -> Value {
        json!({
            "count": self.count,
            "mean": self.mean(),
            "histogram": {
                "lo": self.hist.lo,
                "hi": self.hist.hi,
                "bins": self.hist.counts,
                "overflow": self.hist.overflow,
            },
        })
    }
}

type Counter = BTreeMap<String, u64>;

fn merge_counter(a: &mut Counter, b: &Counter) {
    for (k, v) in b {
        *a.entry(k.clone()).or_insert(0) += v;
    }
}

/// Highest counts first, ties by key.
fn top_k(c: &Counter, k: usize) -> Vec<(&str, u64)> {
    let mut v: Vec<(&str, u64)> = c.iter().map(|(s, &n)| (s.as_str(), n)).collect();
    v.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    v.truncate(k);
    v
}

/// Removes a trailing ` <integer>` (numbered composition children).
pub fn strip_number(label: &str) -> &str {
    let t = label.trim();
    match t.rsplit_once(' ') {
        Some((head, tail)) if !tail.is_empty() && tail.bytes().all(|b| b.is_ascii_digit()) => head.trim_end(),
        _ => t,
    }
}

fn trim_word(w: &str) -> &str {
    w.trim_matches(|c: char| !c.is_alphanumeric())
}

#[derive(Debug, Clone, PartialEq)]
pub struct StatsReport {
    pub config: StatsConfig,
    pub images: u64,
    pub skipped: u64,
    pub vertices: Metric,
    pub edges: Metric,
    pub captions: Metric,
    pub words: Metric,
    pub diameter: Metric,
    pub leaves: Metric,
    pub nodes_by_type: [Metric; 4],
    pub region_relative: [Metric; 4],
    pub region_pixels: [Metric; 4],
    pub out_edges: [Metric; 4],
    pub caption_words: [Metric; 8],
    pub caption_tokens: [Metric; 8],
    pub clip_score: [Metric; 8],
    pub label_words: Metric,
    pub label_tokens: Metric,
    pub edge_labels: Counter,
    pub label_pairs: Counter,
    pub top_words: Counter,
    pub trigrams: Counter,
}

fn node_slot(t: NodeType) -> usize {
    NodeType::ALL.iter().position(|&k| k == t).expect("listed")
}

fn caption_slot(t: CaptionType) -> usize {
    CaptionType::ALL.iter().position(|&k| k == t).expect("listed")
}

impl StatsReport {
    pub fn new(config: StatsConfig) -> Self {
        let b = config.bins.max(1);
        let m = |hi: f64| Metric::new(0.0, hi, b);
        StatsReport {
            images: 0,
            skipped: 0,
            vertices: m(64.0),
            edges: m(128.0),
            captions: m(128.0),
            words: m(4096.0),
            diameter: m(32.0),
            leaves: m(64.0),
            nodes_by_type: std::array::from_fn(|_| m(64.0)),
            region_relative: std::array::from_fn(|_| m(1.0)),
            region_pixels: std::array::from_fn(|_| m(4_194_304.0)),
            out_edges: std::array::from_fn(|_| m(32.0)),
            caption_words: std::array::from_fn(|_| m(256.0)),
            caption_tokens: std::array::from_fn(|_| m(256.0)),
            clip_score: std::array::from_fn(|_| Metric::new(-1.0, 1.0, b)),
            label_words: m(16.0),
            label_tokens: m(16.0),
            edge_labels: Counter::new(),
            label_pairs: Counter::new(),
            top_words: Counter::new(),
            trigrams: Counter::new(),
            config,
        }
    }

    /// Adds one record. Invalid graphs are only counted in `skipped`.
    pub fn add(&mut self, g: &GbcGraph, tokenizer: &dyn Tokenizer) {
        if !validate(g).ok {
            self.skipped += 1;
            return;
        }
        let Ok(diameter) = dag::diameter(g) else {
            self.skipped += 1;
            return;
        };
        self.images += 1;
        self.vertices.add(g.nodes.len() as f64);
        self.edges.add(g.edges.len() as f64);
        self.captions.add(g.caption_count() as f64);
        self.diameter.add(diameter as f64);

        let mut out_deg: BTreeMap<&str, usize> = BTreeMap::new();
        for e in &g.edges {
            *out_deg.entry(e.source.as_str()).or_insert(0) += 1;
        }
        let mut per_type = [0usize; 4];
        let mut leaves = 0;
        let mut words = 0usize;
        for n in &g.nodes {
            let t = node_slot(n.kind);
            per_type[t] += 1;
            let deg = out_deg.get(n.id.as_str()).copied().unwrap_or(0);
            if deg == 0 {
                leaves += 1;
            }
            self.out_edges[t].add(deg as f64);
            self.region_relative[t].add(n.bbox.area());
            self.region_pixels[t].add(n.bbox.pixel_area(g.width.get(), g.height.get()));
            for c in &n.captions {
                let k = caption_slot(c.kind);
                let raw: Vec<String> = c.text.split_whitespace().map(str::to_lowercase).collect();
                words += raw.len();
                self.caption_words[k].add(raw.len() as f64);
                self.caption_tokens[k].add(tokenizer.count(&c.text) as f64);
                if let Some(s) = c.clip_score {
                    self.clip_score[k].add(s);
                }
                for w in &raw {
                    let w = trim_word(w);
                    if !w.is_empty() && !is_stop_word(w) {
                        *self.top_words.entry(w.to_string()).or_insert(0) += 1;
                    }
                }
                for tri in raw.windows(3) {
                    *self.trigrams.entry(tri.join(" ")).or_insert(0) += 1;
                }
            }
        }
        self.words.add(words as f64);
        self.leaves.add(leaves as f64);
        for (t, &c) in per_type.iter().enumerate() {
            self.nodes_by_type[t].add(c as f64);
        }

        let kinds: BTreeMap<&str, NodeType> = g.nodes.iter().map(|n| (n.id.as_str(), n.kind)).collect();
        for e in &g.edges {
            self.label_words.add(e.label.split_whitespace().count() as f64);
            self.label_tokens.add(tokenizer.count(&e.label) as f64);
            if kinds.get(e.target.as_str()) == Some(&NodeType::Entity) {
                *self.edge_labels.entry(strip_number(&e.label).to_lowercase()).or_insert(0) += 1;
                for out in g.out_edges(&e.target) {
                    let key = format!(
                        "{} -> {}",
                        strip_number(&e.label).to_lowercase(),
                        strip_number(&out.label).to_lowercase()
                    );
                    *self.label_pairs.entry(key).or_insert(0) += 1;
                }
            }
        }
    }

    fn metrics(&self) -> Vec<(String, &Metric)> {
        let mut v: Vec<(String, &Metric)> = vec![
            ("vertices_per_image".into(), &self.vertices),
            ("edges_per_image".into(), &self.edges),
            ("captions_per_image".into(), &self.captions),
            ("words_per_image".into(), &self.words),
            ("graph_diameter".into(), &self.diameter),
            ("leaves_per_image".into(), &self.leaves),
            ("words_per_edge_label".into(), &self.label_words),
            ("tokens_per_edge_label".into(), &self.label_tokens),
        ];
        for (i, t) in NodeType::ALL.iter().enumerate() {
            v.push((format!("{}_nodes_per_image", t.as_str()), &self.nodes_by_type[i]));
            v.push((format!("{}_region_relative", t.as_str()), &self.region_relative[i]));
            v.push((format!("{}_region_pixels", t.as_str()), &self.region_pixels[i]));
            v.push((format!("{}_out_edges", t.as_str()), &self.out_edges[i]));
        }
        for (i, t) in CaptionType::ALL.iter().enumerate() {
            v.push((format!("{}_words_per_caption", t.as_str()), &self.caption_words[i]));
            v.push((format!("{}_tokens_per_caption", t.as_str()), &self.caption_tokens[i]));
            v.push((format!("{}_clip_score", t.as_str()), &self.clip_score[i]));
        }
        v
    }

    fn metrics_mut(&mut self) -> Vec<&mut Metric> {
        let mut v: Vec<&mut Metric> = vec![
            &mut self.vertices,
            &mut self.edges,
            &mut self.captions,
            &mut self.words,
            &mut self.diameter,
            &mut self.leaves,
            &mut self.label_words,
            &mut self.label_tokens,
        ];
        v.extend(self.nodes_by_type.iter_mut());
        v.extend(self.region_relative.iter_mut());
        v.extend(self.region_pixels.iter_mut());
        v.extend(self.out_edges.iter_mut());
        v.extend(self.caption_words.iter_mut());
        v.extend(self.caption_tokens.iter_mut());
        v.extend(self.clip_score.iter_mut());
        v
    }

    fn all_metrics(&self) -> Vec<&Metric> {
        let mut v: Vec<&Metric> = vec![
            &self.vertices,
            &self.edges,
            &self.captions,
            &self.words,
            &self.diameter,
            &self.leaves,
            &self.label_words,
            &self.label_tokens,
        ];
        v.extend(self.nodes_by_type.iter());
        v.extend(self.region_relative.iter());
        v.extend(self.region_pixels.iter());
        v.extend(self.out_edges.iter());
        v.extend(self.caption_words.iter());
        v.extend(self.caption_tokens.iter());
        v.extend(self.clip_score.iter());
        v
    }

    /// Adds `other` into `self`.
    pub fn absorb(&mut self, other: &StatsReport) -> Result<()> {
        if self.config != other.config {
            return Err(GbcError::ConfigMismatch(format!("{:?} vs {:?}", self.config, other.config)));
        }
        self.images += other.images;
        self.skipped += other.skipped;
        for (a, b) in self.metrics_mut().into_iter().zip(other.all_metrics()) {
            a.merge(b);
        }
        merge_counter(&mut self.edge_labels, &other.edge_labels);
        merge_counter(&mut self.label_pairs, &other.label_pairs);
        merge_counter(&mut self.top_words, &other.top_words);
        merge_counter(&mut self.trigrams, &other.trigrams);
        Ok(())
    }

    pub fn table1(&self) -> BTreeMap<&'static str, f64> {
        let values = [
            self.vertices.mean(),
            self.edges.mean(),
            self.captions.mean(),
            self.words.mean(),
            self.diameter.mean(),
        ];
        TABLE1_FIELDS.into_iter().zip(values).collect()
    }

    pub fn to_json(&self) -> Value {
        let k = self.config.top_k;
        let ranked = |c: &Counter| -> Value {
            top_k(c, k)
                .into_iter()
                .map(|(s, n)| json!({ "value": s, "count": n }))
                .collect()
        };
        let metrics: Map<String, Value> = self.metrics().into_iter().map(|(n, m)| (n, m.to_json())).collect();
        json!({
            "config": self.config,
            "images": self.images,
            "skipped": self.skipped,
            "table1": self.table1(),
            "metrics": metrics,
            "top": {
                "edge_labels": ranked(&self.edge_labels),
                "label_pairs": ranked(&self.label_pairs),
                "words": ranked(&self.top_words),
                "trigrams": ranked(&self.trigrams),
            },
        })
    }

    /// Pretty JSON with sorted keys and a trailing newline.
    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.to_json()).expect("report serializes");
        s.push('\n');
        s
    }
}

pub fn merge(a: &StatsReport, b: &StatsReport) -> Result<StatsReport> {
    let mut out = a.clone();
    out.absorb(b)?;
    Ok(out)
}

pub fn compute_stats<'a>(
    graphs: impl IntoIterator<Item = &'a GbcGraph>,
    tokenizer: &dyn Tokenizer,
    config: &StatsConfig,
) -> Result<StatsReport> {
    if tokenizer.id() != config.tokenizer {
        return Err(GbcError::ConfigMismatch(format!(
            "tokenizer {} but config names {}",
            tokenizer.id(),
            config.tokenizer
        )));
    }
    let mut r = StatsReport::new(config.clone());
    for g in graphs {
        r.add(g, tokenizer);
    }
    Ok(r)
}
