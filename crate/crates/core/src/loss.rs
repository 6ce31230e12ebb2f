// SPDX-License-Identifier: Apache-2.0

//! Multi-positive contrastive losses over a precomputed similarity matrix.
//!
//! Column `c` of the `N x Z` cosine matrix is a caption paired with image
//! `groups[c]`. With `s = cos / tau`:
//!
//! * image side: each positive is contrasted only against the other images'
//!   captions, `-log(e^s_ic / (e^s_ic + sum_{l not in G_i} e^s_il))`;
//! * text side: each caption against all images,
//!   `-log(e^s_ic / sum_k e^s_kc)`.
//!
//! Both are averaged over the `Z` positives.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{GbcError, Result};
use crate::par::ordered_map;

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityBatch {
    pub images: usize,
    /// Row-major `images x groups.len()`.
    pub cos: Vec<f64>,
    /// Image index of each caption column.
    pub groups: Vec<usize>,
    pub tau: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub value: f64,
    /// Same layout as [`SimilarityBatch::cos`].
    pub grad_cos: Vec<f64>,
    pub grad_tau: f64,
}

impl SimilarityBatch {
    pub fn new(images: usize, cos: Vec<f64>, groups: Vec<usize>, tau: f64) -> Result<Self> {
        let b = SimilarityBatch { images, cos, groups, tau };
        b.check()?;
        Ok(b)
    }

    /// Uniform cosines in `[-0.9, 0.9]`; image `i` gets `sizes[i]` captions.
    pub fn random(rng: &mut impl Rng, sizes: &[usize], tau: f64) -> Self {
        let groups: Vec<usize> = sizes
            .iter()
            .enumerate()
            .flat_map(|(i, &m)| std::iter::repeat_n(i, m))
            .collect();
        let cos = (0..sizes.len() * groups.len()).map(|_| rng.gen_range(-0.9..0.9)).collect();
        SimilarityBatch {
            images: sizes.len(),
            cos,
            groups,
            tau,
        }
    }

    pub fn captions(&self) -> usize {
        self.groups.len()
    }

    pub fn at(&self, image: usize, caption: usize) -> f64 {
        self.cos[image * self.captions() + caption]
    }

    fn check(&self) -> Result<()> {
        let z = self.captions();
        if self.images == 0 || z == 0 {
            return Err(GbcError::DegenerateBatch(format!("{} images, {z} captions", self.images)));
        }
        if self.cos.len() != self.images * z {
            return Err(GbcError::ShapeMismatch(format!(
                "{} similarities for a {}x{z} batch",
                self.cos.len(),
                self.images
            )));
        }
        if let Some(&g) = self.groups.iter().find(|&&g| g >= self.images) {
            return Err(GbcError::ShapeMismatch(format!("caption assigned to image {g}")));
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(GbcError::DegenerateBatch(format!("temperature {}", self.tau)));
        }
        if self.cos.iter().any(|c| !c.is_finite()) {
            return Err(GbcError::DegenerateBatch("non-finite similarity".into()));
        }
        Ok(())
    }

    fn finish(&self, terms: Vec<f64>, grad_s: Vec<f64>) -> LossOutput {
        let z = self.captions() as f64;
        let value = pairwise_sum(&terms) / z;
        let grad_cos: Vec<f64> = grad_s.iter().map(|g| g / z / self.tau).collect();
        let tau2 = self.tau * self.tau;
        let prods: Vec<f64> = grad_s.iter().zip(&self.cos).map(|(g, c)| -g / z * c / tau2).collect();
        LossOutput {
            value,
            grad_cos,
            grad_tau: pairwise_sum(&prods),
        }
    }
}

/// Pairwise (cascade) summation: fixed association order, small error growth.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 8 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `log(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x == f64::NEG_INFINITY {
        0.0
    } else if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn loss_image(batch: &SimilarityBatch) -> Result<LossOutput> {
    batch.check()?;
    let z = batch.captions();
    let rows: Vec<usize> = (0..batch.images).collect();
    let per_row = ordered_map(&rows, |&i| {
        let s: Vec<f64> = (0..z).map(|c| batch.at(i, c) / batch.tau).collect();
        let neg = log_sum_exp((0..z).filter(|&l| batch.groups[l] != i).map(|l| s[l]));
        let mut terms = Vec::new();
        let mut grad = vec![0.0; z];
        for c in (0..z).filter(|&c| batch.groups[c] == i) {
            let p = s[c];
            terms.push(softplus(neg - p));
            if neg == f64::NEG_INFINITY {
                continue;
            }
            // denominator e^p + e^neg, evaluated relative to its larger term
            let m = p.max(neg);
            let denom = (p - m).exp() + (neg - m).exp();
            grad[c] -= (neg - m).exp() / denom;
            for l in (0..z).filter(|&l| batch.groups[l] != i) {
                grad[l] += (s[l] - m).exp() / denom;
            }
        }
        (terms, grad)
    });
    let mut terms = Vec::with_capacity(z);
    let mut grad_s = Vec::with_capacity(batch.images * z);
    for (t, g) in per_row {
        terms.extend(t);
        grad_s.extend(g);
    }
    Ok(batch.finish(terms, grad_s))
}

pub fn loss_text(batch: &SimilarityBatch) -> Result<LossOutput> {
    batch.check()?;
    let z = batch.captions();
    let n = batch.images;
    let cols: Vec<usize> = (0..z).collect();
    let per_col = ordered_map(&cols, |&c| {
        let s: Vec<f64> = (0..n).map(|k| batch.at(k, c) / batch.tau).collect();
        let lse = log_sum_exp(s.iter().copied());
        let own = batch.groups[c];
        let grad: Vec<f64> = (0..n)
            .map(|k| (s[k] - lse).exp() - if k == own { 1.0 } else { 0.0 })
            .collect();
        (lse - s[own], grad)
    });
    let mut terms = Vec::with_capacity(z);
    let mut grad_s = vec![0.0; n * z];
    for (c, (t, g)) in per_col.into_iter().enumerate() {
        terms.push(t);
        for (k, v) in g.into_iter().enumerate() {
            grad_s[k * z + c] = v;
        }
    }
    Ok(batch.finish(terms, grad_s))
}

/// Symmetric single-positive InfoNCE on a square matrix whose diagonal holds
/// the matched pairs: the mean of the image-to-text and text-to-image
/// cross-entropies.
pub fn infonce(cos: &[f64], n: usize, tau: f64) -> Result<f64> {
    if n == 0 || cos.len() != n * n {
        return Err(GbcError::DegenerateBatch(format!("{} values for {n} pairs", cos.len())));
    }
    let mut i2t = Vec::with_capacity(n);
    let mut t2i = Vec::with_capacity(n);
    for i in 0..n {
        let row = log_sum_exp((0..n).map(|j| cos[i * n + j] / tau));
        let col = log_sum_exp((0..n).map(|k| cos[k * n + i] / tau));
        let d = cos[i * n + i] / tau;
        i2t.push(row - d);
        t2i.push(col - d);
    }
    Ok((pairwise_sum(&i2t) + pairwise_sum(&t2i)) / (2.0 * n as f64))
}

/// One uniformly drawn caption per image, then [`infonce`] on the reduced
/// square batch.
pub fn sampled_infonce(batch: &SimilarityBatch, seed: u64) -> Result<f64> {
    batch.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picks = Vec::with_capacity(batch.images);
    for i in 0..batch.images {
        let cols: Vec<usize> = (0..batch.captions()).filter(|&c| batch.groups[c] == i).collect();
        if cols.is_empty() {
            return Err(GbcError::DegenerateBatch(format!("image {i} has no caption")));
        }
        picks.push(cols[rng.gen_range(0..cols.len())]);
    }
    let n = batch.images;
    let cos: Vec<f64> = (0..n)
        .flat_map(|i| picks.iter().map(move |&c| (i, c)))
        .map(|(i, c)| batch.at(i, c))
        .collect();
    infonce(&cos, n, batch.tau)
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Central-difference check of both losses. Returns the worst norm-wise
/// relative error `|g - g_fd| / max(|g|, |g_fd|, 1e-12)` over cos and tau.
pub fn gradient_error(batch: &SimilarityBatch, step: f64) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for f in [loss_image, loss_text] {
        let base = f(batch)?;
        let mut analytic = base.grad_cos.clone();
        analytic.push(base.grad_tau);
        let mut numeric = Vec::with_capacity(analytic.len());
        for k in 0..batch.cos.len() {
            let mut up = batch.clone();
            up.cos[k] += step;
            let mut down = batch.clone();
            down.cos[k] -= step;
            numeric.push((f(&up)?.value - f(&down)?.value) / (2.0 * step));
        }
        let mut up = batch.clone();
        up.tau += step;
        let mut down = batch.clone();
        down.tau -= step;
        numeric.push((f(&up)?.value - f(&down)?.value) / (2.0 * step));
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, b)| a - b).collect();
        let scale = norm(&analytic).max(norm(&numeric)).max(1e-12);
        worst = worst.max(norm(&diff) / scale);
    }
    Ok(worst)
}

/// Property suite behind `gbc loss-check`.
pub fn self_check(seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let n = rng.gen_range(1..=4);
        let sizes: Vec<usize> = (0..n).map(|_| rng.gen_range(1..=3)).collect();
        let tau = rng.gen_range(0.05..1.0);
        worst = worst.max(gradient_error(&SimilarityBatch::random(&mut rng, &sizes, tau), 1e-5)?);
    }
    out.push(CheckResult {
        name: "gradient",
        passed: worst <= 1e-4,
        detail: format!("max relative error {worst:.3e}"),
    });

    let mut gap: f64 = 0.0;
    for _ in 0..20 {
        let n = rng.gen_range(1..=6);
        let tau = rng.gen_range(0.05..1.0);
        let b = SimilarityBatch::random(&mut rng, &vec![1; n], tau);
        let both = (loss_image(&b)?.value + loss_text(&b)?.value) / 2.0;
        gap = gap.max((both - infonce(&b.cos, n, b.tau)?).abs());
    }
    out.push(CheckResult {
        name: "single_positive_reduction",
        passed: gap <= 1e-12,
        detail: format!("max gap {gap:.3e}"),
    });

    let eq = SimilarityBatch::new(2, vec![0.3; 4], vec![0, 1], 0.5)?;
    let err = (loss_image(&eq)?.value - std::f64::consts::LN_2).abs();
    out.push(CheckResult {
        name: "equal_cosines_log2",
        passed: err <= 1e-12,
        detail: format!("error {err:.3e}"),
    });

    let mut negative = 0;
    for _ in 0..50 {
        let n = rng.gen_range(1..=5);
        let sizes: Vec<usize> = (0..n).map(|_| rng.gen_range(1..=4)).collect();
        let tau = rng.gen_range(0.01..1.0);
        let b = SimilarityBatch::random(&mut rng, &sizes, tau);
        if loss_image(&b)?.value < 0.0 || loss_text(&b)?.value < 0.0 {
            negative += 1;
        }
    }
    out.push(CheckResult {
        name: "non_negative",
        passed: negative == 0,
        detail: format!("{negative} negative values"),
    });
    Ok(out)
}
