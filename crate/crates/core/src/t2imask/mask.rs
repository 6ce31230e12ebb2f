// SPDX-License-Identifier: Apache-2.0

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::dag;
use crate::error::{GbcError, Result};
use crate::graph::{Caption, GbcGraph};
use crate::text::{edge_token_positions, TokenSpanSet, Tokenizer};
use crate::validate::{validate, validate_with, Options, ValidationReport};

pub const DEFAULT_NEGATIVE: &str = "low quality, worst quality";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchGrid {
    pub width: usize,
    pub height: usize,
}

impl PatchGrid {
    pub fn new(width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(GbcError::DimensionMismatch(format!("grid {width}x{height}")));
        }
        Ok(PatchGrid { width, height })
    }

    /// Parses `WxH`.
    pub fn parse(s: &str) -> Result<Self> {
        let (w, h) = s
            .split_once(['x', 'X'])
            .ok_or_else(|| GbcError::DimensionMismatch(format!("grid {s:?} is not WxH")))?;
        let p = |v: &str| {
            v.trim()
                .parse::<usize>()
                .map_err(|_| GbcError::DimensionMismatch(format!("grid {s:?} is not WxH")))
        };
        Self::new(p(w)?, p(h)?)
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Normalized centre of patch `p` (row-major index).
    pub fn center(&self, p: usize) -> (f64, f64) {
        let (x, y) = (p % self.width, p / self.width);
        ((x as f64 + 0.5) / self.width as f64, (y as f64 + 0.5) / self.height as f64)
    }
}

/// Row-major `patches x nodes` boolean matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchPromptMask {
    pub grid: PatchGrid,
    /// Column order.
    pub nodes: Vec<String>,
    pub mask: Vec<Vec<bool>>,
}

impl PatchPromptMask {
    pub fn attends(&self, patch: usize, node: usize) -> bool {
        self.mask[patch][node]
    }
}

/// A patch attends a node when the node's box contains the patch centre and
/// no descendant's box does. Columns follow topological order.
///
/// Relation nodes should be removed beforehand (see
/// [`GbcGraph::generation_view`]).
pub fn build_patch_prompt_mask(graph: &GbcGraph, grid: PatchGrid) -> Result<PatchPromptMask> {
    let report = validate_with(graph, Options::structural());
    if !report.ok {
        return Err(GbcError::invalid(&report));
    }
    let (adj, order) = dag::topological_indices(graph)?;
    let n = graph.nodes.len();
    let p = grid.len();
    let centers: Vec<(f64, f64)> = (0..p).map(|i| grid.center(i)).collect();
    let contains: Vec<Vec<bool>> = graph
        .nodes
        .iter()
        .map(|node| centers.iter().map(|&(x, y)| node.bbox.contains_point(x, y)).collect())
        .collect();
    // covered[v][p]: some strict descendant of v contains p
    let mut covered = vec![vec![false; p]; n];
    for &v in order.iter().rev() {
        let mut acc = vec![false; p];
        for &c in &adj.children[v] {
            for (k, a) in acc.iter_mut().enumerate() {
                *a |= contains[c][k] || covered[c][k];
            }
        }
        covered[v] = acc;
    }
    let mask = (0..p)
        .map(|k| order.iter().map(|&v| contains[v][k] && !covered[v][k]).collect())
        .collect();
    Ok(PatchPromptMask {
        grid,
        nodes: order.iter().map(|&v| graph.nodes[v].id.clone()).collect(),
        mask,
    })
}

fn prompt_text<'a>(graph: &'a GbcGraph, id: &str) -> &'a str {
    graph
        .node(id)
        .and_then(|n| n.prompt_caption())
        .map_or("", |c| c.text.as_str())
}

/// Token indices of each parent prompt that name a child, keyed by parent id.
/// Parents without children are absent.
pub fn parent_label_token_mask(graph: &GbcGraph, tokenizer: &dyn Tokenizer) -> Result<BTreeMap<String, TokenSpanSet>> {
    let report = validate(graph);
    if !report.ok {
        return Err(GbcError::invalid(&report));
    }
    let mut out: BTreeMap<String, TokenSpanSet> = BTreeMap::new();
    for e in &graph.edges {
        let positions = edge_token_positions(tokenizer, prompt_text(graph, &e.source), &e.label)?;
        out.entry(e.source.clone()).or_default().extend(positions);
    }
    Ok(out)
}

/// A graph whose captions list what must not appear. It keeps the topology
/// of its source but is exempt from the label-witness rule.
#[derive(Debug, Clone, PartialEq)]
pub struct NegativeGraph(GbcGraph);

impl NegativeGraph {
    pub fn graph(&self) -> &GbcGraph {
        &self.0
    }

    pub fn into_inner(self) -> GbcGraph {
        self.0
    }

    pub fn validate(&self) -> ValidationReport {
        validate_with(
            &self.0,
            Options {
                check_label_witness: false,
                check_captions: true,
            },
        )
    }
}

/// Each node gets one caption: its outgoing labels in edge order, then the
/// base negative prompt, comma separated.
pub fn build_negative_gbc(graph: &GbcGraph, base_negative: &str) -> NegativeGraph {
    let mut labels: HashMap<&str, Vec<&str>> = HashMap::new();
    for e in &graph.edges {
        labels.entry(e.source.as_str()).or_default().push(e.label.as_str());
    }
    let mut out = graph.clone();
    for node in &mut out.nodes {
        let mut parts: Vec<&str> = labels.get(node.id.as_str()).cloned().unwrap_or_default();
        parts.push(base_negative);
        node.captions = vec![Caption::new(parts.join(", "), node.kind.default_caption_kind())];
    }
    NegativeGraph(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextPrompt {
    pub node: String,
    pub text: String,
    /// Tokens of `text` that come from the parent and are masked out.
    pub masked: TokenSpanSet,
}

/// Prompt of each node prefixed by its parent's prompt, in topological order.
/// Nodes with several parents use the parent with the smallest id.
pub fn parent_context_prompts(graph: &GbcGraph, tokenizer: &dyn Tokenizer) -> Result<Vec<ContextPrompt>> {
    let report = validate_with(graph, Options::structural());
    if !report.ok {
        return Err(GbcError::invalid(&report));
    }
    let order = dag::topological_order(graph)?;
    let mut parents: HashMap<&str, &str> = HashMap::new();
    for e in &graph.edges {
        let slot = parents.entry(e.target.as_str()).or_insert(e.source.as_str());
        if e.source.as_str() < *slot {
            *slot = e.source.as_str();
        }
    }
    Ok(order
        .iter()
        .map(|id| {
            let own = prompt_text(graph, id);
            match parents.get(id.as_str()) {
                None => ContextPrompt {
                    node: id.clone(),
                    text: own.to_string(),
                    masked: TokenSpanSet::new(),
                },
                Some(parent) => {
                    let ctx = prompt_text(graph, parent);
                    ContextPrompt {
                        node: id.clone(),
                        text: format!("{ctx} {own}"),
                        masked: (0..tokenizer.count(ctx)).collect(),
                    }
                }
            }
        })
        .collect())
}
