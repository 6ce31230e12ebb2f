// SPDX-License-Identifier: Apache-2.0

//! Score-based caption filtering that keeps the graph valid.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::dag;
use crate::error::{GbcError, Result};
use crate::graph::{Caption, CaptionType, GbcGraph, NodeType};
use crate::normalize;
use crate::validate::validate;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TypePolicy {
    /// Drop captions scoring below this value.
    Absolute(f64),
    /// Drop the lowest-scoring fraction of captions of the type.
    Quantile(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterPolicy {
    pub default: TypePolicy,
    pub per_type: BTreeMap<CaptionType, TypePolicy>,
}

impl Default for FilterPolicy {
    fn default() -> Self {
        FilterPolicy::quantile(0.05)
    }
}

impl FilterPolicy {
    pub fn quantile(q: f64) -> Self {
        FilterPolicy {
            default: TypePolicy::Quantile(q),
            per_type: BTreeMap::new(),
        }
    }

    pub fn policy(&self, kind: CaptionType) -> TypePolicy {
        self.per_type.get(&kind).copied().unwrap_or(self.default)
    }

    pub fn check(&self) -> Result<()> {
        for p in std::iter::once(&self.default).chain(self.per_type.values()) {
            match *p {
                TypePolicy::Absolute(t) if !t.is_finite() => {
                    return Err(GbcError::InvalidGraph(format!("threshold {t} is not finite")))
                }
                TypePolicy::Quantile(q) if !(0.0..=1.0).contains(&q) => {
                    return Err(GbcError::InvalidGraph(format!("quantile {q} outside [0,1]")))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Resolved per-type thresholds. Types without an entry are never filtered.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Thresholds(pub BTreeMap<CaptionType, f64>);

impl Thresholds {
    pub fn get(&self, kind: CaptionType) -> f64 {
        self.0.get(&kind).copied().unwrap_or(f64::NEG_INFINITY)
    }

    fn keeps(&self, c: &Caption) -> bool {
        c.clip_score.is_none_or(|s| s >= self.get(c.kind))
    }
}

/// Exact per-type score collection for the first corpus pass.
#[derive(Debug, Clone, Default)]
pub struct ScoreCollector {
    scores: BTreeMap<CaptionType, Vec<f64>>,
}

impl ScoreCollector {
    pub fn add_graph(&mut self, g: &GbcGraph) {
        for c in g.nodes.iter().flat_map(|n| &n.captions) {
            if let Some(s) = c.clip_score.filter(|s| s.is_finite()) {
                self.scores.entry(c.kind).or_default().push(s);
            }
        }
    }

    pub fn merge(&mut self, other: ScoreCollector) {
        for (k, mut v) in other.scores {
            self.scores.entry(k).or_default().append(&mut v);
        }
    }

    pub fn count(&self, kind: CaptionType) -> usize {
        self.scores.get(&kind).map_or(0, Vec::len)
    }
}

/// Linear interpolation between order statistics at `q * (n - 1)`.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NEG_INFINITY;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (sorted[hi] - sorted[lo]) * frac
    }
}

pub fn resolve_thresholds(scores: &ScoreCollector, policy: &FilterPolicy) -> Thresholds {
    let mut out = BTreeMap::new();
    for kind in CaptionType::ALL {
        let t = match policy.policy(kind) {
            TypePolicy::Absolute(t) => t,
            TypePolicy::Quantile(q) => {
                let mut v = scores.scores.get(&kind).cloned().unwrap_or_default();
                v.sort_by(f64::total_cmp);
                quantile(&v, q)
            }
        };
        out.insert(kind, t);
    }
    Thresholds(out)
}

/// Drops low-scoring captions bottom-up.
///
/// Nodes are visited children-first. A node disappears (with its in-edges)
/// once it has no caption left and every child is gone. A surviving node whose
/// remaining captions no longer mention some surviving out-edge label gets one
/// bag-of-words caption listing those labels. Relation boxes that lost a
/// child are shrunk to the remaining children. The root is never dropped:
/// that case is reported as [`GbcError::RootFiltered`].
pub fn filter_graph(graph: &GbcGraph, thresholds: &Thresholds) -> Result<GbcGraph> {
    let report = validate(graph);
    if !report.ok {
        return Err(GbcError::invalid(&report));
    }
    let (adj, order) = dag::topological_indices(graph)?;
    let n = graph.nodes.len();
    let mut dropped = vec![false; n];
    let mut nodes = graph.nodes.clone();
    let mut out_edges: Vec<Vec<usize>> = vec![Vec::new(); n];
    let index = graph.index();
    for (k, e) in graph.edges.iter().enumerate() {
        out_edges[index[e.source.as_str()]].push(k);
    }
    // relation boxes that must be recomputed: lost a child, or a child relation shrank
    let mut shrunk = vec![false; n];

    for &u in order.iter().rev() {
        let node = &mut nodes[u];
        node.captions.retain(|c| thresholds.keeps(c));
        let children_alive = adj.children[u].iter().any(|&v| !dropped[v]);
        if node.captions.is_empty() && !children_alive {
            if adj.parents[u].is_empty() {
                return Err(GbcError::RootFiltered(node.id.clone()));
            }
            dropped[u] = true;
            continue;
        }
        shrunk[u] = node.kind == NodeType::Relation
            && adj.children[u].iter().any(|&v| dropped[v] || shrunk[v]);
        let folded: Vec<String> = node.captions.iter().map(|c| normalize::fold(&c.text)).collect();
        let mut missing: Vec<&str> = Vec::new();
        let mut seen = HashSet::new();
        for &k in &out_edges[u] {
            let e = &graph.edges[k];
            if dropped[index[e.target.as_str()]] {
                continue;
            }
            let label = normalize::fold(&e.label);
            if !folded.iter().any(|c| c.contains(&label)) && seen.insert(label) {
                missing.push(e.label.trim());
            }
        }
        if !missing.is_empty() {
            node.captions.push(Caption::new(missing.join(", "), CaptionType::BagOfWords));
        }
    }

    let alive: HashMap<&str, bool> = graph
        .nodes
        .iter()
        .enumerate()
        .map(|(i, n)| (n.id.as_str(), !dropped[i]))
        .collect();
    let mut out = GbcGraph {
        url: graph.url.clone(),
        width: graph.width,
        height: graph.height,
        nodes: nodes
            .into_iter()
            .zip(&dropped)
            .filter(|(_, &d)| !d)
            .map(|(n, _)| n)
            .collect(),
        edges: graph
            .edges
            .iter()
            .filter(|e| alive[e.source.as_str()] && alive[e.target.as_str()])
            .cloned()
            .collect(),
    };
    let shrunk_relations: Vec<String> = (0..n)
        .filter(|&i| shrunk[i])
        .map(|i| graph.nodes[i].id.clone())
        .collect();
    if !shrunk_relations.is_empty() {
        out.recompute_relation_boxes(Some(&shrunk_relations));
    }
    Ok(out)
}
