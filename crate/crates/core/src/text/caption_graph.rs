// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dag::{self, Adjacency};
use crate::error::{GbcError, Result};
use crate::graph::GbcGraph;
use crate::normalize;
use crate::validate::validate;

use super::{edge_token_positions, TokenSpanSet, Tokenizer};

#[derive(Debug, Clone, PartialEq)]
pub struct CaptionVertex {
    pub node_id: String,
    pub caption_index: usize,
    pub text: String,
    /// Real tokens; the summary marker sits at position `token_count`.
    pub token_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaptionEdge {
    pub source: usize,
    pub target: usize,
    /// Tokens of the source caption annotated by the target caption.
    pub positions: TokenSpanSet,
}

/// Graph whose vertices are individual captions. An edge runs from a caption
/// to each caption of a child node whenever the caption mentions the label of
/// the connecting edge.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CaptionGraph {
    pub vertices: Vec<CaptionVertex>,
    pub edges: Vec<CaptionEdge>,
}

impl CaptionGraph {
    /// Builds a caption graph from explicit parts, checking that positions
    /// stay inside the source caption and that the result is acyclic.
    pub fn from_parts(vertices: Vec<CaptionVertex>, edges: Vec<CaptionEdge>) -> Result<Self> {
        for e in &edges {
            let (Some(src), Some(_)) = (vertices.get(e.source), vertices.get(e.target)) else {
                return Err(GbcError::ShapeMismatch(format!(
                    "caption edge {}->{} out of range",
                    e.source, e.target
                )));
            };
            if e.positions.is_empty() {
                return Err(GbcError::ShapeMismatch("empty token position set".into()));
            }
            if e.positions.iter().any(|&p| p >= src.token_count) {
                return Err(GbcError::ShapeMismatch(format!(
                    "position outside caption {} ({} tokens)",
                    e.source, src.token_count
                )));
            }
        }
        let g = CaptionGraph { vertices, edges };
        if !g.is_acyclic() {
            return Err(GbcError::InvalidGraph("caption graph has a cycle".into()));
        }
        Ok(g)
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Outgoing edges per vertex, in edge order.
    pub fn children(&self) -> Vec<Vec<&CaptionEdge>> {
        let mut out = vec![Vec::new(); self.vertices.len()];
        for e in &self.edges {
            out[e.source].push(e);
        }
        out
    }

    pub fn is_acyclic(&self) -> bool {
        let n = self.vertices.len();
        let mut adj = Adjacency {
            children: vec![Vec::new(); n],
            parents: vec![Vec::new(); n],
        };
        for e in &self.edges {
            adj.children[e.source].push(e.target);
            adj.parents[e.target].push(e.source);
        }
        let names: Vec<String> = (0..n).map(|i| format!("{i:08}")).collect();
        let ids: Vec<&str> = names.iter().map(String::as_str).collect();
        adj.toposort(&ids).is_ok()
    }

    /// Drops each edge independently with probability `p` (training-time
    /// edge dropout).
    pub fn drop_edges(&self, p: f64, seed: u64) -> CaptionGraph {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        CaptionGraph {
            vertices: self.vertices.clone(),
            edges: self
                .edges
                .iter()
                .filter(|_| !rng.gen_bool(p.clamp(0.0, 1.0)))
                .cloned()
                .collect(),
        }
    }
}

pub fn build_caption_graph(graph: &GbcGraph, tokenizer: &dyn Tokenizer) -> Result<CaptionGraph> {
    let report = validate(graph);
    if !report.ok {
        return Err(GbcError::invalid(&report));
    }
    let (_, order) = dag::topological_indices(graph)?;
    let mut first_vertex = vec![0usize; graph.nodes.len()];
    let mut vertices = Vec::with_capacity(graph.caption_count());
    for &i in &order {
        first_vertex[i] = vertices.len();
        let node = &graph.nodes[i];
        for (k, c) in node.captions.iter().enumerate() {
            vertices.push(CaptionVertex {
                node_id: node.id.clone(),
                caption_index: k,
                text: c.text.clone(),
                token_count: tokenizer.count(&c.text),
            });
        }
    }
    let index = graph.index();
    let mut merged: BTreeMap<(usize, usize), TokenSpanSet> = BTreeMap::new();
    for e in &graph.edges {
        let u = index[e.source.as_str()];
        let v = index[e.target.as_str()];
        for (k, c) in graph.nodes[u].captions.iter().enumerate() {
            if !normalize::contains_label(&c.text, &e.label) {
                continue;
            }
            let positions = edge_token_positions(tokenizer, &c.text, &e.label)?;
            let src = first_vertex[u] + k;
            for j in 0..graph.nodes[v].captions.len() {
                merged
                    .entry((src, first_vertex[v] + j))
                    .or_default()
                    .extend(positions.iter().copied());
            }
        }
    }
    let edges = merged
        .into_iter()
        .map(|((source, target), positions)| CaptionEdge {
            source,
            target,
            positions,
        })
        .collect();
    Ok(CaptionGraph { vertices, edges })
}
