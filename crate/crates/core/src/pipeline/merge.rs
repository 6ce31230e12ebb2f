// SPDX-License-Identifier: Apache-2.0

//! Merging entity nodes that describe the same object.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::dag::{self, Adjacency};
use crate::error::{GbcError, Result};
use crate::graph::{BBox, GbcGraph, NodeType};
use crate::normalize;
use crate::validate::validate;

/// Minimum share of each box's area that the intersection must cover.
pub const MERGE_OVERLAP: f64 = 0.85;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeOutcome {
    pub graph: GbcGraph,
    /// `(kept, absorbed)` pairs in the order they were merged.
    pub merged: Vec<(String, String)>,
    /// Candidate pairs left alone because one reaches the other.
    pub skipped: Vec<(String, String)>,
}

/// Normalized string equality.
pub fn exact_label_match(a: &str, b: &str) -> bool {
    normalize::fold(a) == normalize::fold(b)
}

fn overlaps(a: &BBox, b: &BBox) -> bool {
    let (aa, ab) = (a.area(), b.area());
    if aa <= 0.0 || ab <= 0.0 {
        return false;
    }
    let inter = a.intersection_area(b);
    inter / aa > MERGE_OVERLAP && inter / ab > MERGE_OVERLAP
}

fn same_object_labels<F>(g: &GbcGraph, a: &str, b: &str, same_object: &F) -> bool
where
    F: Fn(&str, &str) -> bool,
{
    g.in_edges(a)
        .any(|ea| g.in_edges(b).any(|eb| same_object(&ea.label, &eb.label)))
}

/// Finds the next mergeable pair, earlier node first in topological order.
fn next_pair<F>(
    g: &GbcGraph,
    tried: &mut HashSet<(String, String)>,
    skipped: &mut Vec<(String, String)>,
    same_object: &F,
) -> Result<Option<(usize, usize)>>
where
    F: Fn(&str, &str) -> bool,
{
    let (adj, order) = dag::topological_indices(g)?;
    let entities: Vec<usize> = order
        .into_iter()
        .filter(|&i| g.nodes[i].kind == NodeType::Entity)
        .collect();
    for (k, &a) in entities.iter().enumerate() {
        for &b in &entities[k + 1..] {
            let (na, nb) = (&g.nodes[a], &g.nodes[b]);
            let key = (na.id.clone(), nb.id.clone());
            if tried.contains(&key)
                || !overlaps(&na.bbox, &nb.bbox)
                || !same_object_labels(g, &na.id, &nb.id, same_object)
            {
                continue;
            }
            if related(&adj, a, b) {
                log::debug!("merge of {} and {} would create a cycle", na.id, nb.id);
                tried.insert(key.clone());
                skipped.push(key);
                continue;
            }
            return Ok(Some((a, b)));
        }
    }
    Ok(None)
}

fn related(adj: &Adjacency, a: usize, b: usize) -> bool {
    adj.reachable(a)[b] || adj.reachable(b)[a]
}

fn absorb(g: &mut GbcGraph, keep: usize, gone: usize) {
    let keep_id = g.nodes[keep].id.clone();
    let gone_node = g.nodes.remove(gone);
    let target = g.node_mut(&keep_id).expect("kept node present");
    for c in gone_node.captions {
        if !target.captions.iter().any(|t| t.text == c.text) {
            target.captions.push(c);
        }
    }
    let mut seen = HashSet::new();
    let edges = std::mem::take(&mut g.edges);
    for mut e in edges {
        if e.source == gone_node.id {
            e.source = keep_id.clone();
        }
        if e.target == gone_node.id {
            e.target = keep_id.clone();
        }
        if seen.insert((e.source.clone(), e.target.clone(), normalize::fold(&e.label))) {
            g.edges.push(e);
        }
    }
}

/// Merges entity pairs whose boxes each overlap the other by more than
/// [`MERGE_OVERLAP`] and whose incoming labels satisfy `same_object`.
///
/// The later node (topologically) is folded into the earlier one. Pairs where
/// one node is reachable from the other are skipped and listed in the outcome.
pub fn merge_nodes<F>(graph: &GbcGraph, same_object: F) -> Result<MergeOutcome>
where
    F: Fn(&str, &str) -> bool,
{
    let report = validate(graph);
    if !report.ok {
        return Err(GbcError::invalid(&report));
    }
    let mut g = graph.clone();
    let mut tried = HashSet::new();
    let mut merged = Vec::new();
    let mut skipped = Vec::new();
    while let Some((a, b)) = next_pair(&g, &mut tried, &mut skipped, &same_object)? {
        merged.push((g.nodes[a].id.clone(), g.nodes[b].id.clone()));
        absorb(&mut g, a, b);
    }
    if !merged.is_empty() {
        let adj = Adjacency::build(&g)?;
        let index = g.index();
        let mut up = vec![false; g.nodes.len()];
        let mut stack: Vec<usize> = merged.iter().map(|(k, _)| index[k.as_str()]).collect();
        while let Some(u) = stack.pop() {
            for &p in &adj.parents[u] {
                if !up[p] {
                    up[p] = true;
                    stack.push(p);
                }
            }
        }
        let relations: Vec<String> = (0..g.nodes.len())
            .filter(|&i| up[i] && g.nodes[i].kind == NodeType::Relation)
            .map(|i| g.nodes[i].id.clone())
            .collect();
        g.recompute_relation_boxes(Some(&relations));
    }
    Ok(MergeOutcome { graph: g, merged, skipped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Caption, CaptionType, Edge, Node};

    fn fixture(b1: BBox, b2: BBox) -> GbcGraph {
        let mut g = GbcGraph::new("u", 100, 100);
        g.nodes.push(
            Node::new("image", NodeType::Image, BBox::FULL)
                .with_caption(Caption::new("a dog next to a dog", CaptionType::Short)),
        );
        g.nodes.push(
            Node::new("dog_a", NodeType::Entity, b1)
                .with_caption(Caption::new("brown fur with a collar", CaptionType::Entity)),
        );
        g.nodes.push(
            Node::new("dog_b", NodeType::Entity, b2)
                .with_caption(Caption::new("brown fur", CaptionType::Entity))
                .with_caption(Caption::new("brown fur with a collar", CaptionType::Entity)),
        );
        g.nodes.push(
            Node::new("collar", NodeType::Entity, BBox::new(0.2, 0.2, 0.3, 0.25))
                .with_caption(Caption::new("red collar", CaptionType::Entity)),
        );
        g.edges.push(Edge::new("image", "dog_a", "dog"));
        g.edges.push(Edge::new("image", "dog_b", "dog"));
        g.edges.push(Edge::new("dog_b", "collar", "collar"));
        g
    }

    #[test]
    fn disjoint_unchanged() {
        let g = fixture(BBox::new(0.0, 0.0, 0.4, 0.4), BBox::new(0.5, 0.5, 0.9, 0.9));
        let out = merge_nodes(&g, exact_label_match).unwrap();
        assert_eq!(out.graph, g);
        assert!(out.merged.is_empty());
    }

    #[test]
    fn identical_boxes_merge() {
        let b = BBox::new(0.1, 0.1, 0.5, 0.5);
        let g = fixture(b, b);
        let out = merge_nodes(&g, exact_label_match).unwrap();
        let m = &out.graph;
        assert!(validate(m).ok, "{}", validate(m).summary());
        assert_eq!(m.nodes.len(), 3);
        let kept = &out.merged[0].0;
        let gone = &out.merged[0].1;
        assert!(m.node(gone).is_none());
        let texts: Vec<&str> = m.node(kept).unwrap().captions.iter().map(|c| c.text.as_str()).collect();
        assert_eq!(texts.len(), 2);
        assert!(texts.contains(&"brown fur") && texts.contains(&"brown fur with a collar"));
        // the two image->dog edges collapse; collar hangs off the kept node
        assert_eq!(m.edges.len(), 2);
        assert!(m.edges.contains(&Edge::new("image", kept.as_str(), "dog")));
        assert!(m.edges.contains(&Edge::new(kept.as_str(), "collar", "collar")));
    }

    #[test]
    fn overlap_boundary() {
        // second box keeps 84% of its area inside the first
        let a = BBox::new(0.0, 0.0, 0.5, 0.5);
        let b = BBox::new(0.0, 0.08, 0.5, 0.5 + 0.08);
        assert!((a.intersection_area(&b) / b.area() - 0.84).abs() < 1e-9);
        let out = merge_nodes(&fixture(a, b), exact_label_match).unwrap();
        assert!(out.merged.is_empty());
    }

    #[test]
    fn label_predicate_gates() {
        let b = BBox::new(0.1, 0.1, 0.5, 0.5);
        let out = merge_nodes(&fixture(b, b), |_, _| false).unwrap();
        assert!(out.merged.is_empty());
    }

    #[test]
    fn ancestor_pair_skipped() {
        let b = BBox::new(0.1, 0.1, 0.5, 0.5);
        let mut g = fixture(b, BBox::new(0.6, 0.6, 0.9, 0.9));
        // collar sits under dog_b with a box matching dog_a and label "dog"
        g.nodes[3].bbox = b;
        g.nodes[3].captions = vec![Caption::new("a small dog", CaptionType::Entity)];
        g.nodes[2].captions.push(Caption::new("a dog", CaptionType::Entity));
        g.edges[2] = Edge::new("dog_b", "collar", "dog");
        g.nodes[2].bbox = b;
        assert!(validate(&g).ok, "{}", validate(&g).summary());
        let out = merge_nodes(&g, exact_label_match).unwrap();
        assert!(!out.skipped.is_empty());
        assert!(dag::topological_order(&out.graph).is_ok());
        assert!(validate(&out.graph).ok);
    }

    #[test]
    fn labels_fold() {
        assert!(exact_label_match("Dog", "  dog "));
        assert!(!exact_label_match("dog", "dogs"));
    }
}
