// SPDX-License-Identifier: Apache-2.0

//! Invariant checker. Violations are data: every broken rule is reported with
//! a stable rule id and the offending node or edge.

use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dag::Adjacency;
use crate::graph::{GbcGraph, NodeType};
use crate::normalize;

/// Coordinate tolerance for the relation-box rule.
pub const RELATION_BBOX_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Rule {
    BboxRange,
    ImageFullFrame,
    CaptionsEmpty,
    ClipScoreRange,
    CaptionKind,
    DuplicateNodeId,
    DanglingEdge,
    Cycle,
    ImageRoot,
    UnreachableNode,
    RelationBboxUnion,
    EdgeLabelWitness,
}

impl Rule {
    pub const ALL: [Rule; 12] = [
        Rule::BboxRange,
        Rule::ImageFullFrame,
        Rule::CaptionsEmpty,
        Rule::ClipScoreRange,
        Rule::CaptionKind,
        Rule::DuplicateNodeId,
        Rule::DanglingEdge,
        Rule::Cycle,
        Rule::ImageRoot,
        Rule::UnreachableNode,
        Rule::RelationBboxUnion,
        Rule::EdgeLabelWitness,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Rule::BboxRange => "BBOX_RANGE",
            Rule::ImageFullFrame => "IMAGE_FULL_FRAME",
            Rule::CaptionsEmpty => "CAPTIONS_EMPTY",
            Rule::ClipScoreRange => "CLIP_SCORE_RANGE",
            Rule::CaptionKind => "CAPTION_KIND",
            Rule::DuplicateNodeId => "DUPLICATE_NODE_ID",
            Rule::DanglingEdge => "DANGLING_EDGE",
            Rule::Cycle => "CYCLE",
            Rule::ImageRoot => "IMAGE_ROOT",
            Rule::UnreachableNode => "UNREACHABLE_NODE",
            Rule::RelationBboxUnion => "RELATION_BBOX_UNION",
            Rule::EdgeLabelWitness => "EDGE_LABEL_WITNESS",
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub rule: Rule,
    /// Node id, or `source->target` for edges.
    pub subject: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub ok: bool,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    fn from_violations(violations: Vec<Violation>) -> Self {
        ValidationReport {
            ok: violations.is_empty(),
            violations,
        }
    }

    pub fn rules(&self) -> HashSet<Rule> {
        self.violations.iter().map(|v| v.rule).collect()
    }

    pub fn summary(&self) -> String {
        if self.ok {
            return "ok".into();
        }
        self.violations
            .iter()
            .map(|v| format!("{} {}: {}", v.rule, v.subject, v.message))
            .collect::<Vec<_>>()
            .join("; ")
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Options {
    pub check_label_witness: bool,
    pub check_captions: bool,
}

impl Default for Options {
    fn default() -> Self {
        Options {
            check_label_witness: true,
            check_captions: true,
        }
    }
}

impl Options {
    /// Skips the caption-presence and label-witness rules; used for values
    /// that only keep part of the captions (plain-text prompts, negatives).
    pub fn structural() -> Self {
        Options {
            check_label_witness: false,
            check_captions: false,
        }
    }
}

pub fn validate(graph: &GbcGraph) -> ValidationReport {
    validate_with(graph, Options::default())
}

pub fn validate_with(graph: &GbcGraph, options: Options) -> ValidationReport {
    let mut out = Vec::new();
    let mut push = |rule: Rule, subject: &str, message: String| {
        out.push(Violation {
            rule,
            subject: subject.to_string(),
            message,
        })
    };

    let mut seen: HashMap<&str, usize> = HashMap::new();
    for node in &graph.nodes {
        let count = seen.entry(node.id.as_str()).or_default();
        *count += 1;
        if *count == 2 {
            push(Rule::DuplicateNodeId, &node.id, "node id used more than once".into());
        }
        if !node.bbox.is_well_formed() {
            push(
                Rule::BboxRange,
                &node.id,
                format!("bbox {:?} outside [0,1] or empty", <[f64; 4]>::from(node.bbox)),
            );
        }
        if node.kind == NodeType::Image && node.bbox != crate::graph::BBox::FULL {
            push(Rule::ImageFullFrame, &node.id, "image node must span [0,0,1,1]".into());
        }
        if options.check_captions && node.captions.is_empty() {
            push(Rule::CaptionsEmpty, &node.id, "node has no captions".into());
        }
        for (i, c) in node.captions.iter().enumerate() {
            if options.check_captions && c.text.trim().is_empty() {
                push(Rule::CaptionsEmpty, &node.id, format!("caption {i} has empty text"));
            }
            if let Some(s) = c.clip_score {
                if !s.is_finite() || !(-1.0..=1.0).contains(&s) {
                    push(Rule::ClipScoreRange, &node.id, format!("caption {i} clip_score {s}"));
                }
            }
            if c.kind.is_image_only() && node.kind != NodeType::Image {
                push(
                    Rule::CaptionKind,
                    &node.id,
                    format!("caption {i} of kind {} on {} node", c.kind, node.kind),
                );
            }
        }
    }

    let index = graph.index();
    for e in &graph.edges {
        for end in [&e.source, &e.target] {
            if !index.contains_key(end.as_str()) {
                push(
                    Rule::DanglingEdge,
                    &format!("{}->{}", e.source, e.target),
                    format!("unknown endpoint `{end}`"),
                );
            }
        }
    }

    let adj = Adjacency::build_lenient(graph);
    let ids: Vec<&str> = graph.nodes.iter().map(|n| n.id.as_str()).collect();
    if let Err((u, v)) = adj.toposort(&ids) {
        push(
            Rule::Cycle,
            &format!("{}->{}", ids[u], ids[v]),
            "edge lies on a directed cycle".into(),
        );
    }

    let images: Vec<usize> = (0..graph.nodes.len())
        .filter(|&i| graph.nodes[i].kind == NodeType::Image)
        .collect();
    match images.as_slice() {
        [] => push(Rule::ImageRoot, "", "graph has no image node".into()),
        [root] => {
            if !adj.parents[*root].is_empty() {
                push(Rule::ImageRoot, ids[*root], "image node has incoming edges".into());
            }
            let reach = adj.reachable(*root);
            for (i, id) in ids.iter().enumerate() {
                if i != *root && !reach[i] && index[id] == i {
                    push(Rule::UnreachableNode, id, "not reachable from the image node".into());
                }
            }
        }
        many => {
            for &i in &many[1..] {
                push(Rule::ImageRoot, ids[i], "more than one image node".into());
            }
        }
    }

    for (i, node) in graph.nodes.iter().enumerate() {
        if node.kind != NodeType::Relation || index[node.id.as_str()] != i {
            continue;
        }
        let union = adj.children[i]
            .iter()
            .map(|&c| graph.nodes[c].bbox)
            .reduce(|a, b| a.union(&b));
        if let Some(u) = union {
            if !node.bbox.approx_eq(&u, RELATION_BBOX_TOLERANCE) {
                push(
                    Rule::RelationBboxUnion,
                    &node.id,
                    format!(
                        "bbox {:?} differs from children union {:?}",
                        <[f64; 4]>::from(node.bbox),
                        <[f64; 4]>::from(u)
                    ),
                );
            }
        }
    }

    if options.check_label_witness {
        let mut folded: HashMap<usize, Vec<String>> = HashMap::new();
        for e in &graph.edges {
            let Some(&s) = index.get(e.source.as_str()) else {
                continue;
            };
            let caps = folded.entry(s).or_insert_with(|| {
                graph.nodes[s]
                    .captions
                    .iter()
                    .map(|c| normalize::fold(&c.text))
                    .collect()
            });
            let label = normalize::fold(&e.label);
            if label.is_empty() || !caps.iter().any(|c| c.contains(&label)) {
                push(
                    Rule::EdgeLabelWitness,
                    &format!("{}->{}", e.source, e.target),
                    format!("label `{}` absent from source captions", e.label),
                );
            }
        }
    }

    ValidationReport::from_violations(out)
}
