// SPDX-License-Identifier: Apache-2.0

//! Flat annotation formats derived from a graph.

use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::dag;
use crate::error::{GbcError, Result};
use crate::graph::{Caption, CaptionType, GbcGraph};
use crate::normalize;
use crate::validate::validate;

/// Breadth-first caption concatenation from the image node.
///
/// Children are visited in the order their edge label first appears in the
/// parent's first caption; labels that do not appear go last, sorted by label.
pub fn concat_bfs(graph: &GbcGraph) -> Result<String> {
    let report = validate(graph);
    if !report.ok {
        return Err(GbcError::invalid(&report));
    }
    let index = graph.index();
    let root = graph
        .nodes
        .iter()
        .position(|n| n.kind == crate::graph::NodeType::Image)
        .ok_or_else(|| GbcError::InvalidGraph("no image node".into()))?;
    let mut seen = vec![false; graph.nodes.len()];
    let mut queue = VecDeque::from([root]);
    seen[root] = true;
    let mut parts: Vec<&str> = Vec::new();
    while let Some(u) = queue.pop_front() {
        let node = &graph.nodes[u];
        parts.extend(node.captions.iter().map(|c| c.text.as_str()));
        let first = node.captions.first().map_or("", |c| c.text.as_str());
        let mut children: Vec<(usize, &str, usize)> = graph
            .out_edges(&node.id)
            .map(|e| {
                let pos = normalize::find_label(first, &e.label)
                    .first()
                    .map_or(usize::MAX, |r| r.start);
                (pos, e.label.as_str(), index[e.target.as_str()])
            })
            .collect();
        children.sort();
        for (_, _, v) in children {
            if !seen[v] {
                seen[v] = true;
                queue.push_back(v);
            }
        }
    }
    Ok(parts.join(" "))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    All,
    /// Everything except relation, composition and multi-entity captions.
    Region,
    /// Relation and composition captions only.
    Relational,
}

impl Preset {
    pub fn kinds(self) -> BTreeSet<CaptionType> {
        CaptionType::ALL
            .into_iter()
            .filter(|k| match self {
                Preset::All => true,
                Preset::Region => !matches!(
                    k,
                    CaptionType::Relation | CaptionType::Composition | CaptionType::MultiEntity
                ),
                Preset::Relational => matches!(k, CaptionType::Relation | CaptionType::Composition),
            })
            .collect()
    }

    pub fn parse(s: &str) -> Option<Preset> {
        match s {
            "all" => Some(Preset::All),
            "region" => Some(Preset::Region),
            "relational" => Some(Preset::Relational),
            _ => None,
        }
    }
}

/// Captions of the requested kinds, nodes in topological order.
pub fn flatten_captions(graph: &GbcGraph, include: &BTreeSet<CaptionType>) -> Result<Vec<(String, Caption)>> {
    let order = dag::topological_order(graph)?;
    let mut out = Vec::new();
    for id in order {
        let node = graph.node(&id).expect("ordered id exists");
        for c in node.captions.iter().filter(|c| include.contains(&c.kind)) {
            out.push((id.clone(), c.clone()));
        }
    }
    Ok(out)
}
