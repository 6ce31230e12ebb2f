// SPDX-License-Identifier: Apache-2.0

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{GbcError, Result};

pub const OTSU_BINS: usize = 256;

/// Patch labels, row-major. Labels are `0..count` in order of first
/// appearance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segmentation {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<usize>,
}

impl Segmentation {
    /// Relabels arbitrary keys to first-appearance order.
    pub fn from_keys<K: std::hash::Hash + Eq>(width: usize, height: usize, keys: impl IntoIterator<Item = K>) -> Self {
        let mut ids: HashMap<K, usize> = HashMap::new();
        let labels = keys
            .into_iter()
            .map(|k| {
                let next = ids.len();
                *ids.entry(k).or_insert(next)
            })
            .collect();
        Segmentation { width, height, labels }
    }

    pub fn count(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.count()];
        for &l in &self.labels {
            s[l] += 1;
        }
        s
    }
}

/// Real values on a patch grid, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl ScoreMap {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height {
            return Err(GbcError::DimensionMismatch(format!(
                "{} values for a {width}x{height} map",
                values.len()
            )));
        }
        Ok(ScoreMap { width, height, values })
    }

    /// Min-max scaled to `[0, 1]`; a constant map becomes all zeros.
    pub fn normalized(&self) -> ScoreMap {
        let lo = self.values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        let values = self
            .values
            .iter()
            .map(|v| if span > 0.0 { (v - lo) / span } else { 0.0 })
            .collect();
        ScoreMap {
            width: self.width,
            height: self.height,
            values,
        }
    }
}

fn bin_of(v: f64) -> usize {
    ((v.clamp(0.0, 1.0) * OTSU_BINS as f64) as usize).min(OTSU_BINS - 1)
}

/// Split index `t` (class 0 = bins `< t`) maximizing between-class variance,
/// or `None` when every value lands in one bin. Class means use bin
/// midpoints. Equal maxima form a run; the middle of the first run wins.
pub fn otsu_bin(values: &[f64]) -> Option<usize> {
    let mut hist = [0u64; OTSU_BINS];
    for &v in values {
        hist[bin_of(v)] += 1;
    }
    let total = values.len() as f64;
    let mid = |b: usize| (b as f64 + 0.5) / OTSU_BINS as f64;
    let grand: f64 = (0..OTSU_BINS).map(|b| hist[b] as f64 * mid(b)).sum();
    let mut best = f64::NEG_INFINITY;
    let mut run: Option<(usize, usize)> = None;
    let mut w0 = 0.0;
    let mut sum0 = 0.0;
    for t in 1..OTSU_BINS {
        w0 += hist[t - 1] as f64;
        sum0 += hist[t - 1] as f64 * mid(t - 1);
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let m0 = sum0 / w0;
        let m1 = (grand - sum0) / w1;
        let var = (w0 / total) * (w1 / total) * (m0 - m1) * (m0 - m1);
        let tol = 1e-12 * var.abs().max(if best.is_finite() { best.abs() } else { 0.0 });
        if run.is_none() || var > best + tol {
            best = var;
            run = Some((t, t));
        } else if (var - best).abs() <= tol {
            if let Some((s, e)) = run {
                if e + 1 == t {
                    run = Some((s, t));
                }
            }
        }
    }
    run.map(|(s, e)| (s + e) / 2)
}

/// Threshold on `[0, 1]` values: the boundary `t / 256` of the best split,
/// or the mean when all values share one bin.
pub fn otsu_threshold(values: &[f64]) -> f64 {
    match otsu_bin(values) {
        Some(t) => t as f64 / OTSU_BINS as f64,
        None if values.is_empty() => 0.0,
        None if values.iter().all(|&v| v == values[0]) => values[0],
        None => values.iter().sum::<f64>() / values.len() as f64,
    }
}

struct Forest {
    parent: Vec<usize>,
    size: Vec<usize>,
    internal: Vec<f64>,
}

impl Forest {
    fn new(n: usize) -> Self {
        Forest {
            parent: (0..n).collect(),
            size: vec![1; n],
            internal: vec![0.0; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn join(&mut self, a: usize, b: usize, w: f64) {
        let (big, small) = if self.size[a] >= self.size[b] { (a, b) } else { (b, a) };
        self.parent[small] = big;
        self.size[big] += self.size[small];
        self.internal[big] = w;
    }
}

/// Graph-based segmentation on the 8-connected grid with edge weight
/// `|a - b|`. Components smaller than `min_size` are then merged into a
/// neighbour along the cheapest remaining edges.
pub fn felzenszwalb_segment(map: &ScoreMap, k: f64, min_size: usize) -> Segmentation {
    let (w, h) = (map.width, map.height);
    let mut edges: Vec<(f64, usize, usize)> = Vec::with_capacity(4 * w * h);
    for y in 0..h {
        for x in 0..w {
            let a = y * w + x;
            let mut push = |bx: usize, by: usize| {
                let b = by * w + bx;
                edges.push(((map.values[a] - map.values[b]).abs(), a, b));
            };
            if x + 1 < w {
                push(x + 1, y);
            }
            if y + 1 < h {
                push(x, y + 1);
                if x + 1 < w {
                    push(x + 1, y + 1);
                }
                if x > 0 {
                    push(x - 1, y + 1);
                }
            }
        }
    }
    edges.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut f = Forest::new(w * h);
    for &(wt, a, b) in &edges {
        let (ra, rb) = (f.find(a), f.find(b));
        if ra == rb {
            continue;
        }
        let ta = f.internal[ra] + k / f.size[ra] as f64;
        let tb = f.internal[rb] + k / f.size[rb] as f64;
        if wt <= ta.min(tb) {
            f.join(ra, rb, wt);
        }
    }
    for &(wt, a, b) in &edges {
        let (ra, rb) = (f.find(a), f.find(b));
        if ra != rb && (f.size[ra] < min_size || f.size[rb] < min_size) {
            f.join(ra, rb, wt);
        }
    }
    let roots: Vec<usize> = (0..w * h).map(|i| f.find(i)).collect();
    Segmentation::from_keys(w, h, roots)
}

/// Finest common refinement: patches share a label iff they share a label in
/// every input.
pub fn combine_segmentations(maps: &[Segmentation]) -> Result<Segmentation> {
    let first = maps
        .first()
        .ok_or_else(|| GbcError::DimensionMismatch("no segmentation to combine".into()))?;
    if let Some(m) = maps
        .iter()
        .find(|m| m.width != first.width || m.height != first.height || m.labels.len() != first.labels.len())
    {
        return Err(GbcError::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            m.width, m.height, first.width, first.height
        )));
    }
    let keys = (0..first.labels.len()).map(|p| maps.iter().map(|m| m.labels[p]).collect::<Vec<_>>());
    Ok(Segmentation::from_keys(first.width, first.height, keys))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Assignment {
    Root,
    /// Index into the leaf score maps.
    Leaf(usize),
}

/// Per-patch node assignment from per-leaf score maps.
///
/// Maps are min-max normalized; each segment's mean is taken per leaf; a leaf
/// claims a segment when its mean exceeds the leaf's Otsu threshold over all
/// segment means. The highest mean wins among claimants (lowest index on
/// ties); unclaimed segments go to the root.
pub fn assign_segments(segments: &Segmentation, leaves: &[ScoreMap]) -> Result<Vec<Assignment>> {
    let n = segments.labels.len();
    if n != segments.width * segments.height {
        return Err(GbcError::DimensionMismatch("segmentation size".into()));
    }
    for m in leaves {
        if m.width != segments.width || m.height != segments.height || m.values.len() != n {
            return Err(GbcError::DimensionMismatch(format!(
                "score map {}x{} vs segmentation {}x{}",
                m.width, m.height, segments.width, segments.height
            )));
        }
    }
    let sizes = segments.sizes();
    let means: Vec<Vec<f64>> = leaves
        .iter()
        .map(|m| {
            let norm = m.normalized();
            let mut sum = vec![0.0; sizes.len()];
            for (p, &l) in segments.labels.iter().enumerate() {
                sum[l] += norm.values[p];
            }
            sum.iter().zip(&sizes).map(|(s, &c)| s / c as f64).collect()
        })
        .collect();
    let thresholds: Vec<f64> = means.iter().map(|m| otsu_threshold(m)).collect();
    let per_segment: Vec<Assignment> = (0..sizes.len())
        .map(|s| {
            let mut best: Option<(usize, f64)> = None;
            for (leaf, m) in means.iter().enumerate() {
                if m[s] > thresholds[leaf] && best.is_none_or(|(_, b)| m[s] > b) {
                    best = Some((leaf, m[s]));
                }
            }
            best.map_or(Assignment::Root, |(l, _)| Assignment::Leaf(l))
        })
        .collect();
    Ok(segments.labels.iter().map(|&l| per_segment[l]).collect())
}

/// `momentum * current + (1 - momentum) * new`.
pub fn ema_update(current: &[f64], new: &[f64], momentum: f64) -> Result<Vec<f64>> {
    if current.len() != new.len() {
        return Err(GbcError::DimensionMismatch(format!("{} vs {} values", current.len(), new.len())));
    }
    if !(0.0..=1.0).contains(&momentum) {
        return Err(GbcError::DimensionMismatch(format!("momentum {momentum} outside [0,1]")));
    }
    Ok(current
        .iter()
        .zip(new)
        .map(|(c, n)| momentum * c + (1.0 - momentum) * n)
        .collect())
}

/// Nearest-neighbour resize of a row-major grid.
pub fn upsample_nearest<T: Copy>(values: &[T], from: (usize, usize), to: (usize, usize)) -> Result<Vec<T>> {
    if values.len() != from.0 * from.1 || from.0 == 0 || from.1 == 0 {
        return Err(GbcError::DimensionMismatch(format!(
            "{} values for a {}x{} grid",
            values.len(),
            from.0,
            from.1
        )));
    }
    let mut out = Vec::with_capacity(to.0 * to.1);
    for y in 0..to.1 {
        let sy = y * from.1 / to.1;
        for x in 0..to.0 {
            let sx = x * from.0 / to.0;
            out.push(values[sy * from.0 + sx]);
        }
    }
    Ok(out)
}
