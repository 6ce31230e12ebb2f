// SPDX-License-Identifier: Apache-2.0

//! Seeded generators for valid graphs and arbitrary DAGs. Used by the test
//! suites, the benches and `gbc` fixture generation.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::graph::{BBox, Caption, CaptionType, Edge, GbcGraph, Node, NodeType};

const NOUNS: &[&str] = &[
    "cat", "dog", "tree", "tower", "boat", "car", "house", "bird", "lamp", "chair", "table", "flower", "cloud",
    "river", "bench", "window", "door", "horse", "bicycle", "umbrella", "mountain", "bridge", "cup", "book",
];
const ADJECTIVES: &[&str] = &[
    "red", "small", "tall", "old", "bright", "wooden", "green", "quiet", "large", "blue", "soft", "dark",
];
const FILLER: &[&str] = &[
    "stands", "in", "the", "scene", "under", "a", "clear", "sky", "with", "light", "near", "background",
    "shown", "from", "above", "and", "some", "detail", "visible", "on", "its", "surface",
];
const RELATIONS: &[&str] = &["near", "behind", "beside", "above", "under"];

#[derive(Debug, Clone)]
pub struct GraphConfig {
    pub min_nodes: usize,
    pub max_nodes: usize,
    /// Chance that a new child is a composition of 2-3 numbered entities.
    pub composition_prob: f64,
    /// Chance of each relation node slot (two slots per graph).
    pub relation_prob: f64,
    /// Chance that a new node gets a second parent.
    pub extra_parent_prob: f64,
    /// Chance that a caption carries a clip score.
    pub score_prob: f64,
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig {
            min_nodes: 1,
            max_nodes: 12,
            composition_prob: 0.15,
            relation_prob: 0.4,
            extra_parent_prob: 0.15,
            score_prob: 0.9,
        }
    }
}

impl GraphConfig {
    /// Sizes centred on 12 nodes per image.
    pub fn corpus() -> Self {
        GraphConfig {
            min_nodes: 6,
            max_nodes: 18,
            ..GraphConfig::default()
        }
    }
}

struct Draft {
    id: String,
    kind: NodeType,
    bbox: BBox,
    /// Noun phrase this node is about.
    subject: String,
    out_labels: Vec<String>,
}

fn sub_box<R: Rng>(rng: &mut R, parent: &BBox) -> BBox {
    let w = parent.width() * rng.gen_range(0.2..0.8);
    let h = parent.height() * rng.gen_range(0.2..0.8);
    let x1 = parent.x1 + rng.gen_range(0.0..=parent.width() - w);
    let y1 = parent.y1 + rng.gen_range(0.0..=parent.height() - h);
    BBox::new(x1, y1, (x1 + w).min(parent.x2), (y1 + h).min(parent.y2))
}

fn filler<R: Rng>(rng: &mut R, n: usize) -> String {
    (0..n).map(|_| *FILLER.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

fn mention<R: Rng>(rng: &mut R, labels: &[String]) -> String {
    labels
        .iter()
        .map(|l| format!("a {} {}", ADJECTIVES.choose(rng).unwrap(), l))
        .collect::<Vec<_>>()
        .join(" and ")
}

/// Generates a graph that passes [`crate::validate`].
pub fn random_graph<R: Rng>(rng: &mut R, config: &GraphConfig) -> GbcGraph {
    let target = rng.gen_range(config.min_nodes.max(1)..=config.max_nodes.max(config.min_nodes.max(1)));
    let mut drafts = vec![Draft {
        id: "image".into(),
        kind: NodeType::Image,
        bbox: BBox::FULL,
        subject: "scene".into(),
        out_labels: Vec::new(),
    }];
    let mut edges: Vec<(usize, usize, String)> = Vec::new();
    let relation_slots = (0..2).filter(|_| rng.gen_bool(config.relation_prob)).count();
    let structural = target.saturating_sub(relation_slots).max(1);

    while drafts.len() < structural {
        let parents: Vec<usize> = (0..drafts.len())
            .filter(|&i| drafts[i].kind != NodeType::Composition)
            .collect();
        let p = *parents.choose(rng).unwrap();
        let noun = *NOUNS.choose(rng).unwrap();
        let bbox = sub_box(rng, &drafts[p].bbox);
        let room = structural - drafts.len();
        if room >= 3 && rng.gen_bool(config.composition_prob) {
            let k = rng.gen_range(2..=3.min(room - 1));
            let plural = format!("{noun}s");
            let c = drafts.len();
            drafts.push(Draft {
                id: format!("{plural}_{c}"),
                kind: NodeType::Composition,
                bbox,
                subject: plural.clone(),
                out_labels: Vec::new(),
            });
            edges.push((p, c, plural));
            for j in 1..=k {
                let label = format!("{noun} {j}");
                let e = drafts.len();
                drafts.push(Draft {
                    id: format!("{noun}-{j}_{e}"),
                    kind: NodeType::Entity,
                    bbox: sub_box(rng, &bbox),
                    subject: noun.to_string(),
                    out_labels: Vec::new(),
                });
                edges.push((c, e, label));
            }
            continue;
        }
        let v = drafts.len();
        drafts.push(Draft {
            id: format!("{noun}_{v}"),
            kind: NodeType::Entity,
            bbox,
            subject: noun.to_string(),
            out_labels: Vec::new(),
        });
        edges.push((p, v, noun.to_string()));
        if v > 1 && rng.gen_bool(config.extra_parent_prob) {
            let q = rng.gen_range(0..v);
            if q != p && drafts[q].kind != NodeType::Composition {
                edges.push((q, v, noun.to_string()));
            }
        }
    }

    let entities: Vec<usize> = (0..drafts.len())
        .filter(|&i| drafts[i].kind == NodeType::Entity)
        .collect();
    for _ in 0..relation_slots {
        if entities.len() < 2 {
            break;
        }
        let pair: Vec<usize> = entities.choose_multiple(rng, 2).copied().collect();
        let (a, b) = (pair[0], pair[1]);
        let la = incoming_label(&edges, a);
        let lb = incoming_label(&edges, b);
        let verb = *RELATIONS.choose(rng).unwrap();
        let r = drafts.len();
        drafts.push(Draft {
            id: format!("relation_{r}"),
            kind: NodeType::Relation,
            bbox: drafts[a].bbox.union(&drafts[b].bbox),
            subject: format!("{la} {verb} {lb}"),
            out_labels: Vec::new(),
        });
        edges.push((0, r, format!("{la} {verb} {lb}")));
        edges.push((r, a, la));
        edges.push((r, b, lb));
    }

    for (s, _, label) in &edges {
        if !drafts[*s].out_labels.contains(label) {
            drafts[*s].out_labels.push(label.clone());
        }
    }

    let mut g = GbcGraph::new(
        format!("https://example.com/images/{:016x}.jpg", rng.gen::<u64>()),
        rng.gen_range(256..=2048),
        rng.gen_range(256..=2048),
    );
    for d in &drafts {
        let captions = captions_for(rng, d, config);
        g.nodes.push(Node {
            id: d.id.clone(),
            kind: d.kind,
            bbox: d.bbox,
            captions,
        });
    }
    // listing order should not leak creation order
    g.nodes[1..].shuffle(rng);
    g.edges = edges
        .into_iter()
        .map(|(s, t, l)| Edge::new(drafts[s].id.clone(), drafts[t].id.clone(), l))
        .collect();
    g
}

fn incoming_label(edges: &[(usize, usize, String)], node: usize) -> String {
    edges
        .iter()
        .find(|(_, t, _)| *t == node)
        .map(|(_, _, l)| l.clone())
        .expect("entity has a parent")
}

fn captions_for<R: Rng>(rng: &mut R, d: &Draft, config: &GraphConfig) -> Vec<Caption> {
    let score = |rng: &mut R| {
        rng.gen_bool(config.score_prob)
            .then(|| (rng.gen_range(0.05..0.45f64) * 1e4).round() / 1e4)
    };
    let mut labels = d.out_labels.clone();
    labels.shuffle(rng);
    let mut out = Vec::new();
    match d.kind {
        NodeType::Image => {
            let split = rng.gen_range(0..=labels.len());
            let (short, detail) = labels.split_at(split);
            let n = rng.gen_range(3..8);
            out.push(Caption {
                text: format!("photo of the {} {}", d.subject, filler(rng, n)),
                kind: CaptionType::Original,
                clip_score: score(rng),
            });
            out.push(Caption {
                text: sentence(rng, "the image shows", short),
                kind: CaptionType::Short,
                clip_score: score(rng),
            });
            let mut detail_text = sentence(rng, "in this picture", detail);
            for _ in 0..rng.gen_range(1..4) {
                let n = rng.gen_range(6..14);
                detail_text.push(' ');
                detail_text.push_str(&capitalize(&filler(rng, n)));
                detail_text.push('.');
            }
            out.push(Caption {
                text: detail_text,
                kind: CaptionType::Detail,
                clip_score: score(rng),
            });
        }
        NodeType::Composition => {
            let text = if labels.is_empty() {
                format!("{} grouped together", d.subject)
            } else {
                let mut parts = Vec::new();
                for w in labels.windows(2) {
                    let verb = *["to the left of", "to the right of", "above", "below"].choose(rng).unwrap();
                    parts.push(format!("{} is {} {}", w[0], verb, w[1]));
                }
                if parts.is_empty() {
                    parts.push(format!("{} stands alone", labels[0]));
                }
                parts.join(", ") + "."
            };
            out.push(Caption {
                text,
                kind: CaptionType::Composition,
                clip_score: score(rng),
            });
            if rng.gen_bool(0.5) {
                let n = rng.gen_range(3..8);
                out.push(Caption {
                    text: format!("several {} {}", d.subject, filler(rng, n)),
                    kind: CaptionType::MultiEntity,
                    clip_score: score(rng),
                });
            }
        }
        NodeType::Relation => {
            out.push(Caption {
                text: format!("the {} {}.", d.subject, filler(rng, 4)),
                kind: CaptionType::Relation,
                clip_score: score(rng),
            });
        }
        NodeType::Entity => {
            let k = rng.gen_range(1..=2);
            let mut chunks: Vec<Vec<String>> = vec![Vec::new(); k];
            for (i, l) in labels.iter().enumerate() {
                chunks[i % k].push(l.clone());
            }
            for chunk in chunks {
                let head = format!("a {} {}", ADJECTIVES.choose(rng).unwrap(), d.subject);
                out.push(Caption {
                    text: sentence(rng, &head, &chunk),
                    kind: CaptionType::Entity,
                    clip_score: score(rng),
                });
            }
        }
    }
    out
}

fn sentence<R: Rng>(rng: &mut R, head: &str, labels: &[String]) -> String {
    let n = rng.gen_range(2..7);
    let mut s = format!("{head} {}", filler(rng, n));
    if !labels.is_empty() {
        s.push_str(" with ");
        s.push_str(&mention(rng, labels));
    }
    s.push('.');
    capitalize(&s)
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().collect::<String>() + c.as_str(),
        None => String::new(),
    }
}

/// Arbitrary DAG on `n` nodes: each forward pair (in a hidden random order)
/// gets an edge with probability `p`. Node ids are shuffled so they do not
/// encode the order. Only structure is meaningful.
pub fn random_dag<R: Rng>(rng: &mut R, n: usize, p: f64) -> GbcGraph {
    let mut g = GbcGraph::new("", 1, 1);
    let mut names: Vec<String> = (0..n).map(|i| format!("n{i}")).collect();
    names.shuffle(rng);
    for (i, name) in names.iter().enumerate() {
        let kind = if i == 0 { NodeType::Image } else { NodeType::Entity };
        g.nodes.push(Node::new(name.clone(), kind, BBox::FULL).with_caption(Caption::new(name.clone(), CaptionType::Entity)));
    }
    for i in 0..n {
        for j in i + 1..n {
            if rng.gen_bool(p) {
                g.edges.push(Edge::new(names[i].clone(), names[j].clone(), names[j].clone()));
            }
        }
    }
    g.nodes.shuffle(rng);
    g
}

/// `count` graphs drawn from one seeded stream.
pub fn corpus(seed: u64, count: usize, config: &GraphConfig) -> Vec<GbcGraph> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| random_graph(&mut rng, config)).collect()
}
