// SPDX-License-Identifier: Apache-2.0

//! Rule-based spatial hints for a group of same-label boxes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mst::euclidean_mst;
use super::nms::DetectionBox;
use crate::error::{GbcError, Result};

/// Fraction of the centre range counted as an extremity on each side.
const EXTREME_BAND: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HintSet {
    pub hints: Vec<String>,
    pub seed: u64,
    pub root: usize,
}

/// Picks the DFS root with a seeded generator, then defers to
/// [`composition_hints_from_root`].
pub fn composition_hints(boxes: &[DetectionBox], seed: u64) -> Result<HintSet> {
    if boxes.len() < 2 {
        return Err(GbcError::TooFewBoxes(boxes.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let root = rng.gen_range(0..boxes.len());
    let mut set = composition_hints_from_root(boxes, root)?;
    set.seed = seed;
    Ok(set)
}

pub fn composition_hints_from_root(boxes: &[DetectionBox], root: usize) -> Result<HintSet> {
    if boxes.len() < 2 {
        return Err(GbcError::TooFewBoxes(boxes.len()));
    }
    if root >= boxes.len() {
        return Err(GbcError::DimensionMismatch(format!(
            "root {root} out of range for {} boxes",
            boxes.len()
        )));
    }
    let centers: Vec<(f64, f64)> = boxes.iter().map(|b| b.bbox.center()).collect();
    let names: Vec<String> = boxes
        .iter()
        .enumerate()
        .map(|(i, b)| format!("{} {}", b.label, i + 1))
        .collect();
    let mut adj = vec![Vec::new(); boxes.len()];
    for (i, j) in euclidean_mst(&centers) {
        adj[i].push(j);
        adj[j].push(i);
    }
    for list in &mut adj {
        list.sort_unstable();
    }
    let bands = Bands::new(&centers);

    let mut hints = Vec::new();
    let mut seen = vec![false; boxes.len()];
    // explicit stack of (node, next child cursor)
    let mut stack: Vec<(usize, usize)> = vec![(root, 0)];
    seen[root] = true;
    if let Some(h) = bands.describe(centers[root], &names[root]) {
        hints.push(h);
    }
    while let Some(top) = stack.last_mut() {
        let (u, cursor) = *top;
        if cursor == adj[u].len() {
            stack.pop();
            continue;
        }
        top.1 += 1;
        let v = adj[u][cursor];
        if seen[v] {
            continue;
        }
        seen[v] = true;
        hints.push(relate(&names[u], centers[u], &names[v], centers[v]));
        if let Some(h) = bands.describe(centers[v], &names[v]) {
            hints.push(h);
        }
        stack.push((v, 0));
    }
    Ok(HintSet { hints, seed: 0, root })
}

/// `a` relative to `b` along the axis with the larger centre offset.
/// Image y grows downward.
fn relate(a: &str, ca: (f64, f64), b: &str, cb: (f64, f64)) -> String {
    let dx = ca.0 - cb.0;
    let dy = ca.1 - cb.1;
    let rel = if dx.abs() >= dy.abs() {
        if dx >= 0.0 {
            "is to the right of"
        } else {
            "is to the left of"
        }
    } else if dy < 0.0 {
        "is above"
    } else {
        "is below"
    };
    format!("{a} {rel} {b}")
}

struct Axis {
    min: f64,
    max: f64,
    active: bool,
}

impl Axis {
    /// -1 low extremity, 1 high extremity, 0 neither.
    fn side(&self, v: f64) -> i8 {
        if !self.active {
            return 0;
        }
        let band = EXTREME_BAND * (self.max - self.min);
        if v - self.min <= band {
            -1
        } else if self.max - v <= band {
            1
        } else {
            0
        }
    }
}

struct Bands {
    x: Axis,
    y: Axis,
}

impl Bands {
    fn new(centers: &[(f64, f64)]) -> Self {
        let span = |f: fn(&(f64, f64)) -> f64| {
            centers.iter().map(f).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                (lo.min(v), hi.max(v))
            })
        };
        let (x0, x1) = span(|c| c.0);
        let (y0, y1) = span(|c| c.1);
        let (rx, ry) = (x1 - x0, y1 - y0);
        Bands {
            x: Axis {
                min: x0,
                max: x1,
                active: rx > 0.0 && rx >= 0.5 * ry,
            },
            y: Axis {
                min: y0,
                max: y1,
                active: ry > 0.0 && ry >= 0.5 * rx,
            },
        }
    }

    fn describe(&self, c: (f64, f64), name: &str) -> Option<String> {
        let place = match (self.y.side(c.1), self.x.side(c.0)) {
            (0, 0) => return None,
            (-1, -1) => "top-left corner",
            (-1, 1) => "top-right corner",
            (1, -1) => "bottom-left corner",
            (1, 1) => "bottom-right corner",
            (-1, _) => "top",
            (1, _) => "bottom",
            (_, -1) => "left side",
            _ => "right side",
        };
        Some(format!("{name} is on the {place} of the composition"))
    }
}
