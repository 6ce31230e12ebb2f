// SPDX-License-Identifier: Apache-2.0

//! Data model for a single annotated image.

use std::collections::HashMap;
use std::fmt;
use std::num::NonZeroU32;

use serde::{Deserialize, Serialize};

use crate::dag;

/// Axis-aligned box in coordinates normalized to the image size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl From<[f64; 4]> for BBox {
    fn from([x1, y1, x2, y2]: [f64; 4]) -> Self {
        BBox { x1, y1, x2, y2 }
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x1, b.y1, b.x2, b.y2]
    }
}

impl BBox {
    pub const FULL: BBox = BBox {
        x1: 0.0,
        y1: 0.0,
        x2: 1.0,
        y2: 1.0,
    };

    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        BBox { x1, y1, x2, y2 }
    }

    pub fn is_well_formed(&self) -> bool {
        (0.0..=1.0).contains(&self.x1)
            && (0.0..=1.0).contains(&self.y1)
            && (0.0..=1.0).contains(&self.x2)
            && (0.0..=1.0).contains(&self.y2)
            && self.x1 < self.x2
            && self.y1 < self.y2
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    /// Area in pixels for an image of the given size.
    pub fn pixel_area(&self, width: u32, height: u32) -> f64 {
        self.area() * f64::from(width) * f64::from(height)
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = self.x2.min(other.x2) - self.x1.max(other.x1);
        let h = self.y2.min(other.y2) - self.y1.max(other.y1);
        w.max(0.0) * h.max(0.0)
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        let inter = self.intersection_area(other);
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }

    /// Closed-box point containment.
    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        self.x1 <= x && x <= self.x2 && self.y1 <= y && y <= self.y2
    }

    pub fn union(&self, other: &BBox) -> BBox {
        BBox {
            x1: self.x1.min(other.x1),
            y1: self.y1.min(other.y1),
            x2: self.x2.max(other.x2),
            y2: self.y2.max(other.y2),
        }
    }

    pub fn approx_eq(&self, other: &BBox, tol: f64) -> bool {
        (self.x1 - other.x1).abs() <= tol
            && (self.y1 - other.y1).abs() <= tol
            && (self.x2 - other.x2).abs() <= tol
            && (self.y2 - other.y2).abs() <= tol
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeType {
    Image,
    Entity,
    Composition,
    Relation,
}

impl NodeType {
    pub const ALL: [NodeType; 4] = [
        NodeType::Image,
        NodeType::Entity,
        NodeType::Composition,
        NodeType::Relation,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            NodeType::Image => "image",
            NodeType::Entity => "entity",
            NodeType::Composition => "composition",
            NodeType::Relation => "relation",
        }
    }

    pub fn parse(s: &str) -> Option<NodeType> {
        NodeType::ALL.into_iter().find(|t| t.as_str() == s)
    }

    /// Caption kind a freshly written caption on this node gets.
    pub fn default_caption_kind(self) -> CaptionType {
        match self {
            NodeType::Image => CaptionType::Short,
            NodeType::Entity => CaptionType::Entity,
            NodeType::Composition => CaptionType::Composition,
            NodeType::Relation => CaptionType::Relation,
        }
    }
}

impl fmt::Display for NodeType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaptionType {
    Original,
    Short,
    Detail,
    Entity,
    Composition,
    MultiEntity,
    Relation,
    BagOfWords,
}

impl CaptionType {
    pub const ALL: [CaptionType; 8] = [
        CaptionType::Original,
        CaptionType::Short,
        CaptionType::Detail,
        CaptionType::Entity,
        CaptionType::Composition,
        CaptionType::MultiEntity,
        CaptionType::Relation,
        CaptionType::BagOfWords,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CaptionType::Original => "original",
            CaptionType::Short => "short",
            CaptionType::Detail => "detail",
            CaptionType::Entity => "entity",
            CaptionType::Composition => "composition",
            CaptionType::MultiEntity => "multi_entity",
            CaptionType::Relation => "relation",
            CaptionType::BagOfWords => "bag_of_words",
        }
    }

    pub fn parse(s: &str) -> Option<CaptionType> {
        CaptionType::ALL.into_iter().find(|t| t.as_str() == s)
    }

    /// Kinds that only make sense on the image node.
    pub fn is_image_only(self) -> bool {
        matches!(
            self,
            CaptionType::Original | CaptionType::Short | CaptionType::Detail
        )
    }
}

impl fmt::Display for CaptionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Caption {
    pub text: String,
    #[serde(rename = "type")]
    pub kind: CaptionType,
    pub clip_score: Option<f64>,
}

impl Caption {
    pub fn new(text: impl Into<String>, kind: CaptionType) -> Self {
        Caption {
            text: text.into(),
            kind,
            clip_score: None,
        }
    }

    pub fn scored(text: impl Into<String>, kind: CaptionType, score: f64) -> Self {
        Caption {
            text: text.into(),
            kind,
            clip_score: Some(score),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: String,
    #[serde(rename = "type")]
    pub kind: NodeType,
    pub bbox: BBox,
    pub captions: Vec<Caption>,
}

impl Node {
    pub fn new(id: impl Into<String>, kind: NodeType, bbox: BBox) -> Self {
        Node {
            id: id.into(),
            kind,
            bbox,
            captions: Vec::new(),
        }
    }

    pub fn with_caption(mut self, caption: Caption) -> Self {
        self.captions.push(caption);
        self
    }

    /// The caption used as this node's prompt: the short caption on the
    /// image node, the first caption elsewhere.
    pub fn prompt_caption(&self) -> Option<&Caption> {
        if self.kind == NodeType::Image {
            if let Some(c) = self.captions.iter().find(|c| c.kind == CaptionType::Short) {
                return Some(c);
            }
        }
        self.captions.first()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub source: String,
    pub target: String,
    pub label: String,
}

impl Edge {
    pub fn new(source: impl Into<String>, target: impl Into<String>, label: impl Into<String>) -> Self {
        Edge {
            source: source.into(),
            target: target.into(),
            label: label.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbcGraph {
    pub url: String,
    pub width: NonZeroU32,
    pub height: NonZeroU32,
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
}

impl GbcGraph {
    pub fn new(url: impl Into<String>, width: u32, height: u32) -> Self {
        GbcGraph {
            url: url.into(),
            width: NonZeroU32::new(width.max(1)).unwrap(),
            height: NonZeroU32::new(height.max(1)).unwrap(),
            nodes: Vec::new(),
            edges: Vec::new(),
        }
    }

    pub fn node(&self, id: &str) -> Option<&Node> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn node_mut(&mut self, id: &str) -> Option<&mut Node> {
        self.nodes.iter_mut().find(|n| n.id == id)
    }

    /// First node of kind `Image`.
    pub fn root(&self) -> Option<&Node> {
        self.nodes.iter().find(|n| n.kind == NodeType::Image)
    }

    /// Maps node ids to their position in `nodes`; later duplicates are ignored.
    pub fn index(&self) -> HashMap<&str, usize> {
        let mut map = HashMap::with_capacity(self.nodes.len());
        for (i, n) in self.nodes.iter().enumerate() {
            map.entry(n.id.as_str()).or_insert(i);
        }
        map
    }

    pub fn out_edges<'a>(&'a self, id: &'a str) -> impl Iterator<Item = &'a Edge> + 'a {
        self.edges.iter().filter(move |e| e.source == id)
    }

    pub fn in_edges<'a>(&'a self, id: &'a str) -> impl Iterator<Item = &'a Edge> + 'a {
        self.edges.iter().filter(move |e| e.target == id)
    }

    pub fn caption_count(&self) -> usize {
        self.nodes.iter().map(|n| n.captions.len()).sum()
    }

    /// Copy used for image generation: relation nodes (and their edges) and
    /// composition-kind captions are removed.
    pub fn generation_view(&self) -> GbcGraph {
        let dropped: Vec<&str> = self
            .nodes
            .iter()
            .filter(|n| n.kind == NodeType::Relation)
            .map(|n| n.id.as_str())
            .collect();
        let mut out = GbcGraph {
            url: self.url.clone(),
            width: self.width,
            height: self.height,
            nodes: Vec::with_capacity(self.nodes.len()),
            edges: Vec::with_capacity(self.edges.len()),
        };
        for n in self.nodes.iter().filter(|n| n.kind != NodeType::Relation) {
            let mut n = n.clone();
            n.captions.retain(|c| c.kind != CaptionType::Composition);
            out.nodes.push(n);
        }
        out.edges = self
            .edges
            .iter()
            .filter(|e| !dropped.contains(&e.source.as_str()) && !dropped.contains(&e.target.as_str()))
            .cloned()
            .collect();
        out
    }

    /// Resets the bbox of every relation node in `only` (or all relation
    /// nodes when `None`) to the union of its children's boxes, deepest first.
    pub(crate) fn recompute_relation_boxes(&mut self, only: Option<&[String]>) {
        let Ok(order) = dag::topological_order(self) else {
            return;
        };
        let index: HashMap<String, usize> = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.id.clone(), i))
            .collect();
        for id in order.iter().rev() {
            let i = index[id];
            if self.nodes[i].kind != NodeType::Relation {
                continue;
            }
            if only.is_some_and(|ids| !ids.contains(id)) {
                continue;
            }
            let union = self
                .edges
                .iter()
                .filter(|e| &e.source == id)
                .filter_map(|e| index.get(&e.target))
                .map(|&j| self.nodes[j].bbox)
                .reduce(|a, b| a.union(&b));
            if let Some(b) = union {
                self.nodes[i].bbox = b;
            }
        }
    }
}
