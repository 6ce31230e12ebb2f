// SPDX-License-Identifier: Apache-2.0

//! Structure-aware cross-attention (SACA) over a caption graph.
//!
//! Every annotated token of a caption attends to the full token sequence
//! (summary row included) of each child caption whose edge annotates it, and
//! the per-child multi-head results are averaged. Tokens without an
//! annotating child, and the summary row, come out as zero.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{GbcError, Result};
use crate::par::ordered_map;
use crate::text::{CaptionEdge, CaptionGraph, CaptionVertex};

/// Dense row-major matrix. Feature matrices of a caption with `L` tokens have
/// `L + 1` rows, the last being the summary position.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        FeatureMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(GbcError::ShapeMismatch(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(GbcError::ShapeMismatch("non-finite feature".into()));
        }
        Ok(FeatureMatrix { rows, cols, data })
    }

    /// Standard normal entries.
    pub fn random(rows: usize, cols: usize, rng: &mut impl rand::Rng) -> Self {
        let data = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
        FeatureMatrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn max_abs_diff(&self, other: &FeatureMatrix) -> f64 {
        if self.rows != other.rows || self.cols != other.cols {
            return f64::INFINITY;
        }
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// `self * w` where `w` is `cols x out`, row-major.
    fn project(&self, w: &[f64], out: usize) -> FeatureMatrix {
        let mut m = FeatureMatrix::zeros(self.rows, out);
        for r in 0..self.rows {
            let dst = m.row_mut(r);
            vec_mat(self.row(r), w, out, dst);
        }
        m
    }
}

fn vec_mat(x: &[f64], w: &[f64], out: usize, dst: &mut [f64]) {
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        let row = &w[i * out..(i + 1) * out];
        for (d, &wij) in dst.iter_mut().zip(row) {
            *d += xi * wij;
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Multi-head attention weights. Per head, query/key/value projections are
/// `d x d_h`; the output projection is `d x d`.
#[derive(Debug, Clone, PartialEq)]
pub struct MhaParams {
    pub dim: usize,
    pub heads: usize,
    pub wq: Vec<Vec<f64>>,
    pub wk: Vec<Vec<f64>>,
    pub wv: Vec<Vec<f64>>,
    pub wo: Vec<f64>,
    pub seed: Option<u64>,
}

impl MhaParams {
    fn check_dims(dim: usize, heads: usize) -> Result<usize> {
        if heads == 0 || dim == 0 || !dim.is_multiple_of(heads) {
            return Err(GbcError::ShapeMismatch(format!(
                "dimension {dim} not divisible into {heads} heads"
            )));
        }
        Ok(dim / heads)
    }

    /// Gaussian entries scaled by `1/sqrt(dim)`.
    pub fn random(dim: usize, heads: usize, seed: u64) -> Result<Self> {
        let dh = Self::check_dims(dim, heads)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (dim as f64).sqrt();
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n)
                .map(|_| {
                    let x: f64 = StandardNormal.sample(&mut rng);
                    scale * x
                })
                .collect()
        };
        let wq = (0..heads).map(|_| draw(dim * dh)).collect();
        let wk = (0..heads).map(|_| draw(dim * dh)).collect();
        let wv = (0..heads).map(|_| draw(dim * dh)).collect();
        let wo = draw(dim * dim);
        Ok(MhaParams {
            dim,
            heads,
            wq,
            wk,
            wv,
            wo,
            seed: Some(seed),
        })
    }

    /// Every projection is a slice of the identity: head `h` reads and
    /// writes feature columns `h*d_h .. (h+1)*d_h`.
    pub fn identity(dim: usize, heads: usize) -> Result<Self> {
        let dh = Self::check_dims(dim, heads)?;
        let slice = |h: usize| {
            let mut w = vec![0.0; dim * dh];
            for k in 0..dh {
                w[(h * dh + k) * dh + k] = 1.0;
            }
            w
        };
        let mut wo = vec![0.0; dim * dim];
        for i in 0..dim {
            wo[i * dim + i] = 1.0;
        }
        Ok(MhaParams {
            dim,
            heads,
            wq: (0..heads).map(slice).collect(),
            wk: (0..heads).map(slice).collect(),
            wv: (0..heads).map(slice).collect(),
            wo,
            seed: None,
        })
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }
}

/// Number of query-key score evaluations (summed over queries and keys, not
/// heads). Safe to share between threads.
#[derive(Debug, Default)]
pub struct OpCounter(AtomicU64);

impl OpCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&self, n: u64) {
        self.0.fetch_add(n, Ordering::Relaxed);
    }

    pub fn get(&self) -> u64 {
        self.0.load(Ordering::Relaxed)
    }

    pub fn merge(&self, other: &OpCounter) {
        self.add(other.get());
    }
}

fn check_inputs(cg: &CaptionGraph, features: &[FeatureMatrix], params: &MhaParams) -> Result<()> {
    MhaParams::check_dims(params.dim, params.heads)?;
    if features.len() != cg.len() {
        return Err(GbcError::ShapeMismatch(format!(
            "{} feature matrices for {} captions",
            features.len(),
            cg.len()
        )));
    }
    for (k, (f, v)) in features.iter().zip(&cg.vertices).enumerate() {
        if f.rows != v.token_count + 1 || f.cols != params.dim {
            return Err(GbcError::ShapeMismatch(format!(
                "caption {k}: features {}x{}, expected {}x{}",
                f.rows,
                f.cols,
                v.token_count + 1,
                params.dim
            )));
        }
    }
    for e in &cg.edges {
        if e.positions.iter().any(|&p| p >= cg.vertices[e.source].token_count) {
            return Err(GbcError::ShapeMismatch(format!("edge {}->{} annotates a non-token", e.source, e.target)));
        }
    }
    if !cg.is_acyclic() {
        return Err(GbcError::InvalidGraph("caption graph has a cycle".into()));
    }
    Ok(())
}

/// Keys and values of one caption, projected per head.
struct Projected {
    keys: Vec<FeatureMatrix>,
    values: Vec<FeatureMatrix>,
}

fn project_kv(f: &FeatureMatrix, params: &MhaParams) -> Projected {
    let dh = params.head_dim();
    Projected {
        keys: params.wk.iter().map(|w| f.project(w, dh)).collect(),
        values: params.wv.iter().map(|w| f.project(w, dh)).collect(),
    }
}

fn softmax_in_place(scores: &mut [f64]) {
    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for s in scores.iter_mut() {
        *s = (*s - m).exp();
        z += *s;
    }
    for s in scores.iter_mut() {
        *s /= z;
    }
}

/// Concatenated head outputs for one query against projected keys/values.
fn attend(q_heads: &[Vec<f64>], kv: &Projected, scale: f64, concat: &mut [f64], scores: &mut Vec<f64>) {
    let dh = q_heads[0].len();
    for (h, q) in q_heads.iter().enumerate() {
        let keys = &kv.keys[h];
        scores.clear();
        scores.extend((0..keys.rows).map(|r| scale * dot(q, keys.row(r))));
        softmax_in_place(scores);
        let out = &mut concat[h * dh..(h + 1) * dh];
        out.fill(0.0);
        let values = &kv.values[h];
        for (r, &a) in scores.iter().enumerate() {
            for (o, v) in out.iter_mut().zip(values.row(r)) {
                *o += a * v;
            }
        }
    }
}

fn forward_caption(
    c: usize,
    vertex: &CaptionVertex,
    edges: &[&CaptionEdge],
    features: &[FeatureMatrix],
    projected: &[Option<Projected>],
    params: &MhaParams,
    counter: &OpCounter,
) -> FeatureMatrix {
    let d = params.dim;
    let dh = params.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();
    let mut out = FeatureMatrix::zeros(vertex.token_count + 1, d);
    let mut counts = vec![0u32; vertex.token_count];
    let mut q_cache: Vec<Option<Vec<Vec<f64>>>> = vec![None; vertex.token_count];
    let mut concat = vec![0.0; d];
    let mut mixed = vec![0.0; d];
    let mut scores = Vec::new();
    let mut ops = 0u64;
    for e in edges {
        let kv = projected[e.target].as_ref().expect("child projected");
        let keys = kv.keys[0].rows as u64;
        for &t in &e.positions {
            let q = q_cache[t].get_or_insert_with(|| {
                params
                    .wq
                    .iter()
                    .map(|w| {
                        let mut v = vec![0.0; dh];
                        vec_mat(features[c].row(t), w, dh, &mut v);
                        v
                    })
                    .collect()
            });
            attend(q, kv, scale, &mut concat, &mut scores);
            ops += keys;
            mixed.fill(0.0);
            vec_mat(&concat, &params.wo, d, &mut mixed);
            for (o, m) in out.row_mut(t).iter_mut().zip(&mixed) {
                *o += m;
            }
            counts[t] += 1;
        }
    }
    for (t, &n) in counts.iter().enumerate() {
        let denom = f64::from(n.max(1));
        for o in out.row_mut(t) {
            *o /= denom;
        }
    }
    counter.add(ops);
    out
}

/// One SACA application. Work is spread over target captions.
pub fn saca_forward(
    cg: &CaptionGraph,
    features: &[FeatureMatrix],
    params: &MhaParams,
    counter: &OpCounter,
) -> Result<Vec<FeatureMatrix>> {
    check_inputs(cg, features, params)?;
    let children = cg.children();
    let mut is_child = vec![false; cg.len()];
    for e in &cg.edges {
        is_child[e.target] = true;
    }
    let idx: Vec<usize> = (0..cg.len()).collect();
    let projected: Vec<Option<Projected>> =
        ordered_map(&idx, |&i| is_child[i].then(|| project_kv(&features[i], params)));
    Ok(ordered_map(&idx, |&c| {
        forward_caption(c, &cg.vertices[c], &children[c], features, &projected, params, counter)
    }))
}

/// Plain multi-head attention of a single query vector over all rows of `kv`.
fn mha_naive(query: &[f64], kv: &FeatureMatrix, params: &MhaParams) -> Vec<f64> {
    let d = params.dim;
    let dh = params.head_dim();
    let mut concat = vec![0.0; d];
    for h in 0..params.heads {
        let proj = |x: &[f64], w: &[f64], j: usize| -> f64 { (0..d).map(|i| x[i] * w[i * dh + j]).sum() };
        let q: Vec<f64> = (0..dh).map(|j| proj(query, &params.wq[h], j)).collect();
        let mut scores = Vec::with_capacity(kv.rows());
        for r in 0..kv.rows() {
            let k: Vec<f64> = (0..dh).map(|j| proj(kv.row(r), &params.wk[h], j)).collect();
            scores.push(dot(&q, &k) / (dh as f64).sqrt());
        }
        let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = scores.iter().map(|s| (s - m).exp()).sum();
        for r in 0..kv.rows() {
            let a = (scores[r] - m).exp() / z;
            for j in 0..dh {
                concat[h * dh + j] += a * proj(kv.row(r), &params.wv[h], j);
            }
        }
    }
    (0..d)
        .map(|j| (0..d).map(|i| concat[i] * params.wo[i * d + j]).sum())
        .collect()
}

/// Direct per-token transcription of the layer: for each caption, token and
/// edge, recompute the attention from scratch.
pub fn saca_oracle(cg: &CaptionGraph, features: &[FeatureMatrix], params: &MhaParams) -> Result<Vec<FeatureMatrix>> {
    check_inputs(cg, features, params)?;
    let mut outputs = Vec::with_capacity(cg.len());
    for (c, v) in cg.vertices.iter().enumerate() {
        let mut out = FeatureMatrix::zeros(v.token_count + 1, params.dim);
        for t in 0..v.token_count {
            let mut sum = vec![0.0; params.dim];
            let mut n = 0usize;
            for e in cg.edges.iter().filter(|e| e.source == c && e.positions.contains(&t)) {
                let r = mha_naive(features[c].row(t), &features[e.target], params);
                for (s, x) in sum.iter_mut().zip(&r) {
                    *s += x;
                }
                n += 1;
            }
            for (o, s) in out.row_mut(t).iter_mut().zip(&sum) {
                *o = s / n.max(1) as f64;
            }
        }
        outputs.push(out);
    }
    Ok(outputs)
}

/// Full self-attention over the rows of one matrix; every row is a query
/// against every row.
pub fn self_attention(features: &FeatureMatrix, params: &MhaParams, counter: &OpCounter) -> Result<FeatureMatrix> {
    MhaParams::check_dims(params.dim, params.heads)?;
    if features.cols != params.dim {
        return Err(GbcError::ShapeMismatch(format!(
            "features have {} columns, expected {}",
            features.cols, params.dim
        )));
    }
    let d = params.dim;
    let dh = params.head_dim();
    let kv = project_kv(features, params);
    let queries: Vec<FeatureMatrix> = params.wq.iter().map(|w| features.project(w, dh)).collect();
    let rows: Vec<usize> = (0..features.rows).collect();
    let scale = 1.0 / (dh as f64).sqrt();
    let out_rows = ordered_map(&rows, |&r| {
        let q: Vec<Vec<f64>> = queries.iter().map(|m| m.row(r).to_vec()).collect();
        let mut concat = vec![0.0; d];
        let mut scores = Vec::new();
        attend(&q, &kv, scale, &mut concat, &mut scores);
        let mut mixed = vec![0.0; d];
        vec_mat(&concat, &params.wo, d, &mut mixed);
        mixed
    });
    counter.add((features.rows * features.rows) as u64);
    FeatureMatrix::from_vec(features.rows, d, out_rows.concat())
}

/// Random tree-shaped caption graph: caption `i > 0` hangs off a uniformly
/// chosen earlier caption, and every edge annotates all `len` tokens.
pub fn tree_caption_graph(captions: usize, len: usize, rng: &mut impl rand::Rng) -> CaptionGraph {
    let vertices = (0..captions)
        .map(|i| CaptionVertex {
            node_id: format!("n{i}"),
            caption_index: 0,
            text: String::new(),
            token_count: len,
        })
        .collect();
    let edges = (1..captions)
        .map(|i| CaptionEdge {
            source: rng.gen_range(0..i),
            target: i,
            positions: (0..len).collect(),
        })
        .collect();
    CaptionGraph { vertices, edges }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub captions: usize,
    /// Scores evaluated by one SACA pass.
    pub count: u64,
    /// Scores evaluated by self-attention over all captions concatenated.
    pub comparator: u64,
}

/// Measures score counts of SACA against concatenated self-attention on
/// random trees of each requested size.
pub fn complexity_probe(sizes: &[usize], len: usize, dim: usize, heads: usize, seed: u64) -> Result<Vec<ProbeRow>> {
    let params = MhaParams::random(dim, heads, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5aca);
    let mut rows = Vec::with_capacity(sizes.len());
    for &n in sizes {
        let cg = tree_caption_graph(n, len, &mut rng);
        let features: Vec<FeatureMatrix> = (0..n).map(|_| FeatureMatrix::random(len + 1, dim, &mut rng)).collect();
        let counter = OpCounter::new();
        saca_forward(&cg, &features, &params, &counter)?;
        let concat = FeatureMatrix::random(n * len, dim, &mut rng);
        let naive = OpCounter::new();
        self_attention(&concat, &params, &naive)?;
        rows.push(ProbeRow {
            captions: n,
            count: counter.get(),
            comparator: naive.get(),
        });
    }
    Ok(rows)
}

/// Least-squares slope of `y` against `x`.
pub fn ls_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}
