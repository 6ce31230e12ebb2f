// SPDX-License-Identifier: Apache-2.0

//! Line-oriented node encoding used for prompt generation. Each node is a
//! six-line block; blocks are separated by one blank line:
//!
//! ```text
//! Node #<id> <name>
//! type: <type>
//! is_leave: <True|False>
//! desc: <description>
//! parents: #<parent_id>(<parent_name>: <name>), ...
//! bbox: [x1, y1, x2, y2]
//! ```
//!
//! `<id>` is the position in topological order and `<name>` the node id.
//! Multiple parents are joined with `", "`. Coordinates use four decimals.

use std::collections::HashMap;

use crate::dag;
use crate::error::{GbcError, Result};
use crate::graph::{BBox, Caption, Edge, GbcGraph, Node, NodeType};
use crate::validate::{validate_with, Options};

pub fn encode_plaintext(graph: &GbcGraph, drop_for_generation: bool) -> Result<String> {
    let report = validate_with(graph, Options::structural());
    if !report.ok {
        return Err(GbcError::invalid(&report));
    }
    let view;
    let g = if drop_for_generation {
        view = graph.generation_view();
        &view
    } else {
        graph
    };
    let (adj, order) = dag::topological_indices(g)?;
    let mut position = vec![0usize; g.nodes.len()];
    for (k, &i) in order.iter().enumerate() {
        position[i] = k;
    }
    let mut blocks = Vec::with_capacity(order.len());
    for (k, &i) in order.iter().enumerate() {
        let node = &g.nodes[i];
        let desc = node
            .prompt_caption()
            .map(|c| c.text.replace(['\n', '\r'], " "))
            .unwrap_or_default();
        let mut parents: Vec<usize> = adj.parents[i].clone();
        parents.sort_by_key(|&p| position[p]);
        parents.dedup();
        let parents = parents
            .iter()
            .map(|&p| format!("#{}({}: {})", position[p], g.nodes[p].id, node.id))
            .collect::<Vec<_>>()
            .join(", ");
        let b = node.bbox;
        blocks.push(format!(
            "Node #{k} {}\n{}\n{}\n{}\n{}\nbbox: [{:.4}, {:.4}, {:.4}, {:.4}]\n",
            node.id,
            field("type", node.kind.as_str()),
            field("is_leave", if adj.children[i].is_empty() { "True" } else { "False" }),
            field("desc", &desc),
            field("parents", &parents),
            b.x1,
            b.y1,
            b.x2,
            b.y2
        ));
    }
    Ok(blocks.join("\n"))
}

fn field(key: &str, value: &str) -> String {
    if value.is_empty() {
        format!("{key}:")
    } else {
        format!("{key}: {value}")
    }
}

struct Block {
    number: usize,
    name: String,
    kind: NodeType,
    is_leaf: bool,
    desc: String,
    /// (parent number, parent name) as written.
    parents: Vec<(usize, String)>,
    bbox: BBox,
}

fn err(block: usize, field: &'static str, message: impl Into<String>) -> GbcError {
    GbcError::Template {
        block,
        field,
        message: message.into(),
    }
}

fn value<'a>(block: usize, line: Option<&'a str>, key: &'static str) -> Result<&'a str> {
    let line = line.ok_or_else(|| err(block, key, "missing line"))?;
    let rest = line
        .strip_prefix(key)
        .and_then(|r| r.strip_prefix(':'))
        .ok_or_else(|| err(block, key, format!("expected `{key}:`, found `{line}`")))?;
    Ok(rest.strip_prefix(' ').unwrap_or(rest))
}

fn parse_block(k: usize, lines: &[&str]) -> Result<Block> {
    let mut it = lines.iter().copied();
    let header = it.next().ok_or_else(|| err(k, "Node", "empty block"))?;
    let rest = header
        .strip_prefix("Node #")
        .ok_or_else(|| err(k, "Node", format!("expected `Node #`, found `{header}`")))?;
    let (num, name) = rest
        .split_once(' ')
        .ok_or_else(|| err(k, "Node", "missing node name"))?;
    let number: usize = num.parse().map_err(|_| err(k, "Node", format!("bad number `{num}`")))?;
    if name.is_empty() {
        return Err(err(k, "Node", "missing node name"));
    }
    let kind_str = value(k, it.next(), "type")?;
    let kind = NodeType::parse(kind_str).ok_or_else(|| err(k, "type", format!("unknown type `{kind_str}`")))?;
    let is_leaf = match value(k, it.next(), "is_leave")? {
        "True" => true,
        "False" => false,
        other => return Err(err(k, "is_leave", format!("expected True or False, found `{other}`"))),
    };
    let desc = value(k, it.next(), "desc")?.to_string();
    let parents = parse_parents(k, value(k, it.next(), "parents")?, name)?;
    let bbox = parse_bbox(k, value(k, it.next(), "bbox")?)?;
    if let Some(extra) = it.next() {
        return Err(err(k, "Node", format!("unexpected line `{extra}`")));
    }
    Ok(Block {
        number,
        name: name.to_string(),
        kind,
        is_leaf,
        desc,
        parents,
        bbox,
    })
}

fn parse_parents(k: usize, mut s: &str, name: &str) -> Result<Vec<(usize, String)>> {
    let mut out = Vec::new();
    let suffix = format!(": {name})");
    while !s.is_empty() {
        let rest = s
            .strip_prefix('#')
            .ok_or_else(|| err(k, "parents", format!("expected `#`, found `{s}`")))?;
        let digits = rest.find(|c: char| !c.is_ascii_digit()).unwrap_or(rest.len());
        let number: usize = rest[..digits]
            .parse()
            .map_err(|_| err(k, "parents", "missing parent number"))?;
        let rest = rest[digits..]
            .strip_prefix('(')
            .ok_or_else(|| err(k, "parents", "expected `(`"))?;
        let end = rest
            .find(&suffix)
            .ok_or_else(|| err(k, "parents", format!("expected `{suffix}`")))?;
        out.push((number, rest[..end].to_string()));
        s = &rest[end + suffix.len()..];
        if !s.is_empty() {
            s = s
                .strip_prefix(", ")
                .ok_or_else(|| err(k, "parents", format!("expected `, `, found `{s}`")))?;
            if s.is_empty() {
                return Err(err(k, "parents", "trailing separator"));
            }
        }
    }
    Ok(out)
}

fn parse_bbox(k: usize, s: &str) -> Result<BBox> {
    let inner = s
        .strip_prefix('[')
        .and_then(|r| r.strip_suffix(']'))
        .ok_or_else(|| err(k, "bbox", format!("expected `[..]`, found `{s}`")))?;
    let parts: Vec<f64> = inner
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| err(k, "bbox", e.to_string()))?;
    match parts.as_slice() {
        [x1, y1, x2, y2] => Ok(BBox::new(*x1, *y1, *x2, *y2)),
        _ => Err(err(k, "bbox", format!("expected 4 coordinates, found {}", parts.len()))),
    }
}

/// Inverse of [`encode_plaintext`]. Each node gets its description as its
/// only caption (kind derived from the node type). Edge labels are not part
/// of the template; a parsed edge is labelled with the child's name.
pub fn parse_plaintext(text: &str) -> Result<GbcGraph> {
    let mut blocks = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    for line in text.lines().chain(std::iter::once("")) {
        if line.is_empty() {
            if !current.is_empty() {
                blocks.push(parse_block(blocks.len(), &current)?);
                current.clear();
            }
        } else {
            current.push(line);
        }
    }
    let mut by_number: HashMap<usize, usize> = HashMap::new();
    for (k, b) in blocks.iter().enumerate() {
        if by_number.insert(b.number, k).is_some() {
            return Err(err(k, "Node", format!("duplicate node number #{}", b.number)));
        }
    }
    let mut g = GbcGraph::new("", 1, 1);
    let mut has_children = vec![false; blocks.len()];
    for (k, b) in blocks.iter().enumerate() {
        for (number, pname) in &b.parents {
            let &p = by_number
                .get(number)
                .ok_or_else(|| err(k, "parents", format!("undefined parent #{number}")))?;
            if &blocks[p].name != pname {
                return Err(err(
                    k,
                    "parents",
                    format!("#{number} is `{}`, not `{pname}`", blocks[p].name),
                ));
            }
            has_children[p] = true;
            g.edges.push(Edge::new(pname.clone(), b.name.clone(), b.name.clone()));
        }
    }
    for (k, b) in blocks.iter().enumerate() {
        if b.is_leaf == has_children[k] {
            return Err(err(k, "is_leave", format!("`{}` disagrees with the parents lists", b.is_leaf)));
        }
        let mut node = Node::new(b.name.clone(), b.kind, b.bbox);
        if !b.desc.is_empty() {
            node.captions.push(Caption::new(b.desc.clone(), b.kind.default_caption_kind()));
        }
        g.nodes.push(node);
    }
    Ok(g)
}
