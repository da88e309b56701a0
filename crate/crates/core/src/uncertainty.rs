//! Per-pixel object likelihoods, the uncertainty map derived from the ratio
//! of the two largest likelihoods, and the training losses built on them.
//!
//! Index 0 of every per-object list is the background.
//!
//! Reductions: cross-entropy is averaged over pixels, and inside
//! [`total_loss`] the confidence term is the root-mean-square of `U`
//! (`‖U‖₂ / √N`) so both terms are resolution independent.
//! [`confidence_loss`] itself returns the plain Euclidean norm.

use crate::error::{Error, Result};
use crate::numerics::Grid;

/// Guard added to the second-largest likelihood before dividing.
pub const EPS_DIV: f64 = 1e-12;
pub const DEFAULT_LAMBDA_U: f64 = 0.5;

/// Decoder logits and their per-pixel softmax across objects.
#[derive(Clone, Debug)]
pub struct ScoreMaps {
    pub logits: Vec<Grid<f64>>,
    pub masks: Vec<Grid<f64>>,
}

impl ScoreMaps {
    pub fn num_maps(&self) -> usize {
        self.masks.len()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.masks[0].shape()
    }

    /// Likelihoods of every object at one pixel.
    pub fn pixel(&self, y: usize, x: usize) -> Vec<f64> {
        self.masks.iter().map(|m| *m.get(y, x)).collect()
    }

    /// Per-pixel argmax (ties to the smaller index).
    pub fn labels(&self) -> Grid<u8> {
        argmax_labels(&self.masks)
    }
}

/// Argmax across maps, ties to the smaller index.
pub fn argmax_labels(maps: &[Grid<f64>]) -> Grid<u8> {
    let (h, w) = maps[0].shape();
    let mut out = Grid::filled(h, w, 0u8).expect("nonempty maps");
    for (idx, cell) in out.cells_mut().iter_mut().enumerate() {
        let mut best = 0usize;
        let mut best_v = maps[0].cells()[idx];
        for (i, m) in maps.iter().enumerate().skip(1) {
            let v = m.cells()[idx];
            if v > best_v {
                best = i;
                best_v = v;
            }
        }
        *cell = best as u8;
    }
    out
}

#[derive(Clone, Debug)]
pub struct UncertaintyMap {
    pub u: Grid<f64>,
}

impl UncertaintyMap {
    pub fn mean(&self) -> f64 {
        self.u.cells().iter().sum::<f64>() / self.u.len() as f64
    }

    pub fn max(&self) -> f64 {
        self.u.cells().iter().copied().fold(0.0, f64::max)
    }
}

fn check_maps(maps: &[Grid<f64>]) -> Result<(usize, usize)> {
    if maps.len() < 2 {
        return Err(Error::TooFewMaps {
            needed: 2,
            got: maps.len(),
        });
    }
    let shape = maps[0].shape();
    for m in &maps[1..] {
        m.ensure_shape(shape)?;
    }
    Ok(shape)
}

/// Per-pixel softmax across the object axis.
pub fn normalize(logits: Vec<Grid<f64>>) -> Result<ScoreMaps> {
    let (h, w) = check_maps(&logits)?;
    let l = logits.len();
    let mut masks = vec![Grid::filled(h, w, 0.0f64)?; l];
    let mut buf = vec![0f64; l];
    for idx in 0..h * w {
        softmax_at(&logits, idx, &mut buf);
        for (m, &p) in masks.iter_mut().zip(&buf) {
            m.cells_mut()[idx] = p;
        }
    }
    Ok(ScoreMaps { logits, masks })
}

fn softmax_at(logits: &[Grid<f64>], idx: usize, out: &mut [f64]) {
    let max = logits.iter().map(|g| g.cells()[idx]).fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, g) in out.iter_mut().zip(logits) {
        *o = (g.cells()[idx] - max).exp();
        total += *o;
    }
    out.iter_mut().for_each(|o| *o /= total);
}

/// Indices of the largest and second-largest values, ties to smaller index.
fn top_two(p: &[f64]) -> (usize, usize) {
    let mut a = 0;
    for i in 1..p.len() {
        if p[i] > p[a] {
            a = i;
        }
    }
    let mut b = if a == 0 { 1 } else { 0 };
    for i in 0..p.len() {
        if i != a && p[i] > p[b] {
            b = i;
        }
    }
    (a, b)
}

/// `exp(1 - m1 / (m2 + EPS_DIV))`, floored at the smallest positive normal
/// so the map stays inside `(0, 1]`.
#[inline]
pub fn uncertainty_value(m1: f64, m2: f64) -> f64 {
    (1.0 - m1 / (m2 + EPS_DIV)).exp().max(f64::MIN_POSITIVE).min(1.0)
}

/// Uncertainty from a single pixel's likelihoods.
pub fn pixel_uncertainty(p: &[f64]) -> f64 {
    let (a, b) = top_two(p);
    uncertainty_value(p[a], p[b])
}

pub fn uncertainty_map(maps: &ScoreMaps) -> UncertaintyMap {
    let (h, w) = maps.shape();
    let mut buf = vec![0f64; maps.num_maps()];
    let u = Grid::from_fn(h, w, |y, x| {
        for (b, m) in buf.iter_mut().zip(&maps.masks) {
            *b = *m.get(y, x);
        }
        pixel_uncertainty(&buf)
    })
    .expect("shape from existing grid");
    UncertaintyMap { u }
}

/// Euclidean norm of the uncertainty map over all pixels.
pub fn confidence_loss(u: &UncertaintyMap) -> f64 {
    u.u.cells().iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn check_labels(labels: &Grid<u8>, shape: (usize, usize), num_maps: usize) -> Result<()> {
    labels.ensure_shape(shape)?;
    if let Some(&bad) = labels.cells().iter().find(|&&c| c as usize >= num_maps) {
        return Err(Error::LabelOutOfRange {
            label: bad as usize,
            max: num_maps - 1,
        });
    }
    Ok(())
}

/// Pixel-averaged `-z_c + log Σ_i exp(z_i)`.
pub fn cross_entropy(logits: &[Grid<f64>], labels: &Grid<u8>) -> Result<f64> {
    let shape = check_maps(logits)?;
    check_labels(labels, shape, logits.len())?;
    let n = labels.len();
    let mut total = 0.0;
    for idx in 0..n {
        let max = logits.iter().map(|g| g.cells()[idx]).fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|g| (g.cells()[idx] - max).exp()).sum::<f64>().ln();
        total += lse - logits[labels.cells()[idx] as usize].cells()[idx];
    }
    Ok(total / n as f64)
}

/// Loss value with its gradient with respect to every logit.
#[derive(Clone, Debug)]
pub struct LossOutput {
    pub total: f64,
    pub cls: f64,
    /// Root-mean-square confidence term.
    pub conf: f64,
    pub grad: Vec<Grid<f64>>,
}

/// `cross_entropy + λ_u · ‖U‖₂ / √N` and its analytic gradient.
///
/// At exact top-two ties the uncertainty is not differentiable; the
/// gradient follows the branch where the smaller index is the maximum.
pub fn total_loss(logits: &[Grid<f64>], labels: &Grid<u8>, lambda_u: f64) -> Result<LossOutput> {
    let (h, w) = check_maps(logits)?;
    check_labels(labels, (h, w), logits.len())?;
    let l = logits.len();
    let n = h * w;
    let nf = n as f64;

    let mut probs = vec![0f64; n * l];
    for idx in 0..n {
        softmax_at(logits, idx, &mut probs[idx * l..(idx + 1) * l]);
    }
    let cls = cross_entropy(logits, labels)?;

    // Uncertainty per pixel, plus the raw (unclamped) value for derivatives.
    let mut u = vec![0f64; n];
    let mut tops = vec![(0usize, 0usize); n];
    for idx in 0..n {
        let p = &probs[idx * l..(idx + 1) * l];
        let (a, b) = top_two(p);
        tops[idx] = (a, b);
        u[idx] = uncertainty_value(p[a], p[b]);
    }
    let unorm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
    let conf = unorm / nf.sqrt();

    let mut grad = vec![Grid::filled(h, w, 0.0f64)?; l];
    let du_scale = if unorm > 0.0 && lambda_u != 0.0 {
        lambda_u / (unorm * nf.sqrt())
    } else {
        0.0
    };
    for idx in 0..n {
        let p = &probs[idx * l..(idx + 1) * l];
        let c = labels.cells()[idx] as usize;
        // d(total)/dU at this pixel
        let dl_du = du_scale * u[idx];
        let (a, b) = tops[idx];
        let denom = p[b] + EPS_DIV;
        let raw_u = (1.0 - p[a] / denom).exp();
        let du_dm1 = -raw_u / denom;
        let du_dm2 = raw_u * p[a] / (denom * denom);
        for j in 0..l {
            let mut g = (p[j] - if j == c { 1.0 } else { 0.0 }) / nf;
            if dl_du != 0.0 {
                let dm1 = p[a] * (if a == j { 1.0 } else { 0.0 } - p[j]);
                let dm2 = p[b] * (if b == j { 1.0 } else { 0.0 } - p[j]);
                g += dl_du * (du_dm1 * dm1 + du_dm2 * dm2);
            }
            grad[j].cells_mut()[idx] = g;
        }
    }
    Ok(LossOutput {
        total: cls + lambda_u * conf,
        cls,
        conf,
        grad,
    })
}
