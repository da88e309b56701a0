//! Uncertain-region refinement.
//!
//! For every pixel whose uncertainty exceeds a threshold, each object gets a
//! local reference feature: the mask-weighted mean of pixel features in a
//! `(2r+1)²` window. The pixel's own feature is scored against each
//! reference, gated by the object's window-max likelihood, and the result
//! scaled by the uncertainty is added to the initial likelihood:
//!
//! ```text
//! y_i(p) = Σ_q M_i(q) r(q) / Σ_q M_i(q)
//! e_i(p) = c_i(p) · score(r(p), y_i(p)),   c_i(p) = max_q M_i(q)
//! S_i(p) = M_i(p) + U(p) · e_i(p)
//! ```
//!
//! The scorer stands in for a learned similarity head and is either a
//! fixed cosine or `tanh(w·cos + b)` with two trainable scalars.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Grid, Vec32};
use crate::uncertainty::{argmax_labels, total_loss, ScoreMaps, UncertaintyMap};

/// Total mask weight below which a window offers no support for an object.
pub const SUPPORT_EPS: f64 = 1e-8;
pub const DEFAULT_RADIUS: usize = 1;
pub const DEFAULT_U_THRESHOLD: f64 = 0.7;

/// Per-pixel local features `r(p)`.
#[derive(Clone, Debug)]
pub struct PixelFeatures {
    pub r: Grid<Vec32>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Scorer {
    FixedCosine,
    TrainableAffine { w: f64, b: f64 },
}

impl Default for Scorer {
    fn default() -> Self {
        Scorer::FixedCosine
    }
}

impl Scorer {
    pub fn trainable() -> Self {
        Scorer::TrainableAffine { w: 1.0, b: 0.0 }
    }

    /// Similarity in `[-1, 1]` from a cosine.
    #[inline]
    pub fn score(&self, cos: f64) -> f64 {
        match *self {
            Scorer::FixedCosine => cos,
            Scorer::TrainableAffine { w, b } => (w * cos + b).tanh(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RefineConfig {
    pub radius: usize,
    pub u_threshold: f64,
    pub scorer: Scorer,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            radius: DEFAULT_RADIUS,
            u_threshold: DEFAULT_U_THRESHOLD,
            scorer: Scorer::FixedCosine,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.radius == 0 {
            return Err(Error::InvalidConfig("radius must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.u_threshold) {
            return Err(Error::InvalidConfig(format!(
                "u_threshold must be in [0, 1], got {}",
                self.u_threshold
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct LocalReferences {
    pub refs: Vec<Grid<Vec32>>,
    pub supported: Vec<Grid<bool>>,
}

fn check_inputs(masks: &ScoreMaps, feats: &PixelFeatures) -> Result<(usize, usize)> {
    let shape = masks.shape();
    feats.r.ensure_shape(shape)?;
    Ok(shape)
}

/// Mask-weighted mean feature of object `obj` around `(y, x)`, or `None`
/// when the window carries no weight for it.
fn reference_at(mask: &Grid<f64>, feats: &Grid<Vec32>, y: usize, x: usize, radius: usize) -> Option<Vec<f64>> {
    let dim = feats.get(y, x).dim();
    let (ys, xs) = mask.window(y, x, radius);
    let mut acc = vec![0f64; dim];
    let mut total = 0f64;
    for qy in ys {
        for qx in xs.clone() {
            let m = *mask.get(qy, qx);
            if m == 0.0 {
                continue;
            }
            total += m;
            for (a, &r) in acc.iter_mut().zip(feats.get(qy, qx).iter()) {
                *a += m * r as f64;
            }
        }
    }
    if total < SUPPORT_EPS {
        return None;
    }
    acc.iter_mut().for_each(|a| *a /= total);
    Some(acc)
}

fn window_max(mask: &Grid<f64>, y: usize, x: usize, radius: usize) -> f64 {
    let (ys, xs) = mask.window(y, x, radius);
    let mut best = f64::NEG_INFINITY;
    for qy in ys {
        for &m in &mask.row(qy)[xs.clone()] {
            best = best.max(m);
        }
    }
    best
}

pub fn local_reference(masks: &ScoreMaps, feats: &PixelFeatures, radius: usize) -> Result<LocalReferences> {
    let (h, w) = check_inputs(masks, feats)?;
    let dim = feats.r.get(0, 0).dim();
    let mut refs = Vec::with_capacity(masks.num_maps());
    let mut supported = Vec::with_capacity(masks.num_maps());
    for mask in &masks.masks {
        let mut sup = Vec::with_capacity(h * w);
        let cells = (0..h * w)
            .map(|idx| match reference_at(mask, &feats.r, idx / w, idx % w, radius) {
                Some(v) => {
                    sup.push(true);
                    Vec32::from_raw(v.into_iter().map(|c| c as f32).collect())
                }
                None => {
                    sup.push(false);
                    Vec32::zeros(dim)
                }
            })
            .collect();
        refs.push(Grid::from_vec(h, w, cells)?);
        supported.push(Grid::from_vec(h, w, sup)?);
    }
    Ok(LocalReferences { refs, supported })
}

/// Sliding-window maximum of each object's likelihood.
pub fn confidence_scores(masks: &ScoreMaps, radius: usize) -> Vec<Grid<f64>> {
    let (h, w) = masks.shape();
    masks
        .masks
        .iter()
        .map(|m| Grid::from_fn(h, w, |y, x| window_max(m, y, x, radius)).expect("shape from existing grid"))
        .collect()
}

#[derive(Clone, Debug)]
pub struct RefinedSegmentation {
    /// Final likelihoods clamped to `[0, 1]`.
    pub masks: Vec<Grid<f64>>,
    /// Argmax of the unclamped final scores.
    pub labels: Grid<u8>,
    /// Pixels whose uncertainty exceeded the threshold.
    pub refined_pixels: usize,
}

/// Per-pixel, per-object quantities that do not depend on scorer parameters.
#[derive(Clone, Copy, Debug)]
struct Term {
    /// `U(p) · c_i(p)`
    gate: f64,
    /// `cos(r(p), y_i(p))`, `None` when unsupported.
    cos: Option<f64>,
}

fn cosine64(a: &[f32], b: &[f64]) -> f64 {
    let mut d = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        let x = x as f64;
        d += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (d / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0)
}

/// Terms for every pixel above the threshold, keyed by flat pixel index.
fn refinement_terms(
    masks: &ScoreMaps,
    u: &UncertaintyMap,
    feats: &PixelFeatures,
    radius: usize,
    u_threshold: f64,
) -> Result<Vec<(usize, Vec<Term>)>> {
    let (h, w) = check_inputs(masks, feats)?;
    u.u.ensure_shape((h, w))?;
    let rows: Vec<Vec<(usize, Vec<Term>)>> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut out = Vec::new();
            for x in 0..w {
                let up = *u.u.get(y, x);
                if !(up > u_threshold) {
                    continue;
                }
                let r = feats.r.get(y, x);
                let terms = masks
                    .masks
                    .iter()
                    .map(|m| {
                        let c = window_max(m, y, x, radius);
                        let cos = reference_at(m, &feats.r, y, x, radius).map(|yi| cosine64(r, &yi));
                        Term { gate: up * c, cos }
                    })
                    .collect();
                out.push((y * w + x, terms));
            }
            out
        })
        .collect();
    Ok(rows.into_iter().flatten().collect())
}

fn apply_terms(masks: &ScoreMaps, terms: &[(usize, Vec<Term>)], scorer: &Scorer) -> Vec<Grid<f64>> {
    let mut s: Vec<Grid<f64>> = masks.masks.clone();
    for (idx, ts) in terms {
        for (i, t) in ts.iter().enumerate() {
            if let Some(cos) = t.cos {
                s[i].cells_mut()[*idx] += t.gate * scorer.score(cos);
            }
        }
    }
    s
}

/// One refinement pass over pixels with `U > u_threshold`.
pub fn refine(
    masks: &ScoreMaps,
    u: &UncertaintyMap,
    feats: &PixelFeatures,
    cfg: &RefineConfig,
) -> Result<RefinedSegmentation> {
    cfg.validate()?;
    let terms = refinement_terms(masks, u, feats, cfg.radius, cfg.u_threshold)?;
    let raw = apply_terms(masks, &terms, &cfg.scorer);
    let labels = argmax_labels(&raw);
    let masks = raw.into_iter().map(|g| g.map(|v| v.clamp(0.0, 1.0))).collect();
    Ok(RefinedSegmentation {
        masks,
        labels,
        refined_pixels: terms.len(),
    })
}

/// One training example: pre-refinement likelihoods with ground truth.
#[derive(Clone, Debug)]
pub struct RefineSample {
    pub masks: ScoreMaps,
    pub u: UncertaintyMap,
    pub feats: PixelFeatures,
    pub gt: Grid<u8>,
}

/// Training problem with scorer-independent quantities precomputed.
pub struct ScorerObjective {
    samples: Vec<(ScoreMaps, Grid<u8>, Vec<(usize, Vec<Term>)>)>,
    lambda_u: f64,
}

impl ScorerObjective {
    pub fn new(dataset: &[RefineSample], radius: usize, u_threshold: f64, lambda_u: f64) -> Result<Self> {
        if dataset.is_empty() {
            return Err(Error::Empty("scorer training set"));
        }
        let samples = dataset
            .iter()
            .map(|s| {
                let terms = refinement_terms(&s.masks, &s.u, &s.feats, radius, u_threshold)?;
                Ok((s.masks.clone(), s.gt.clone(), terms))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ScorerObjective { samples, lambda_u })
    }

    /// Mean total loss over samples, treating refined scores as logits, and
    /// its gradient with respect to `(w, b)`.
    pub fn loss_and_grad(&self, w: f64, b: f64) -> Result<(f64, [f64; 2])> {
        let scorer = Scorer::TrainableAffine { w, b };
        let mut loss = 0.0;
        let mut grad = [0.0; 2];
        for (masks, gt, terms) in &self.samples {
            let s = apply_terms(masks, terms, &scorer);
            let out = total_loss(&s, gt, self.lambda_u)?;
            loss += out.total;
            for (idx, ts) in terms {
                for (i, t) in ts.iter().enumerate() {
                    let Some(cos) = t.cos else { continue };
                    let th = (w * cos + b).tanh();
                    let d = out.grad[i].cells()[*idx] * t.gate * (1.0 - th * th);
                    grad[0] += d * cos;
                    grad[1] += d;
                }
            }
        }
        let n = self.samples.len() as f64;
        Ok((loss / n, [grad[0] / n, grad[1] / n]))
    }

    pub fn loss(&self, w: f64, b: f64) -> Result<f64> {
        let scorer = Scorer::TrainableAffine { w, b };
        let mut loss = 0.0;
        for (masks, gt, terms) in &self.samples {
            let s = apply_terms(masks, terms, &scorer);
            loss += total_loss(&s, gt, self.lambda_u)?.total;
        }
        Ok(loss / self.samples.len() as f64)
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub scorer: Scorer,
    /// Loss at initialization followed by the loss after each accepted step.
    pub curve: Vec<f64>,
    pub rejected_steps: usize,
}

/// Gradient descent on the affine scorer. A step that would raise the loss
/// is rejected and the learning rate halved.
pub fn train_scorer(
    dataset: &[RefineSample],
    init: Scorer,
    cfg: &RefineConfig,
    lambda_u: f64,
    steps: usize,
    lr: f64,
) -> Result<TrainOutcome> {
    let Scorer::TrainableAffine { mut w, mut b } = init else {
        return Err(Error::ScorerNotTrainable);
    };
    cfg.validate()?;
    let objective = ScorerObjective::new(dataset, cfg.radius, cfg.u_threshold, lambda_u)?;
    let (mut loss, mut grad) = objective.loss_and_grad(w, b)?;
    let mut curve = vec![loss];
    let mut lr = lr;
    let mut rejected = 0;
    for _ in 0..steps {
        let (cw, cb) = (w - lr * grad[0], b - lr * grad[1]);
        let (cand_loss, cand_grad) = objective.loss_and_grad(cw, cb)?;
        if cand_loss <= loss {
            w = cw;
            b = cb;
            loss = cand_loss;
            grad = cand_grad;
            curve.push(loss);
        } else {
            rejected += 1;
            lr *= 0.5;
        }
    }
    Ok(TrainOutcome {
        scorer: Scorer::TrainableAffine { w, b },
        curve,
        rejected_steps: rejected,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::uncertainty::{normalize, uncertainty_map};

    fn feat(xs: &[f32]) -> Vec32 {
        Vec32::new(xs.to_vec()).unwrap()
    }

    fn masks_from(m: Vec<Vec<f64>>, h: usize, w: usize) -> ScoreMaps {
        let masks: Vec<Grid<f64>> = m.into_iter().map(|v| Grid::from_vec(h, w, v).unwrap()).collect();
        let logits = masks.iter().map(|g| g.map(|v| v.max(1e-300).ln())).collect();
        ScoreMaps { logits, masks }
    }

    #[test]
    fn local_reference_examples() {
        let masks = masks_from(vec![vec![1.0; 9], vec![0.0; 9]], 3, 3);
        let feats = PixelFeatures {
            r: Grid::filled(3, 3, feat(&[0.2, -0.4])).unwrap(),
        };
        let refs = local_reference(&masks, &feats, 1).unwrap();
        for v in refs.refs[0].cells() {
            assert!((v[0] - 0.2).abs() < 1e-6 && (v[1] + 0.4).abs() < 1e-6);
        }
        assert!(refs.supported[0].cells().iter().all(|&s| s));
        assert!(refs.supported[1].cells().iter().all(|&s| !s));
        assert!(refs.refs[1].cells().iter().all(|v| v.iter().all(|&c| c == 0.0)));

        // two-pixel window, weights 0.75 / 0.25
        let masks = masks_from(vec![vec![0.75, 0.25], vec![0.25, 0.75]], 1, 2);
        let feats = PixelFeatures {
            r: Grid::from_vec(1, 2, vec![feat(&[1.0, 0.0]), feat(&[0.0, 1.0])]).unwrap(),
        };
        let refs = local_reference(&masks, &feats, 1).unwrap();
        let y = refs.refs[0].get(0, 0);
        assert!((y[0] - 0.75).abs() < 1e-6 && (y[1] - 0.25).abs() < 1e-6);
    }

    #[test]
    fn confidence_scores_dilate_points() {
        let masks = masks_from(vec![vec![0.3; 12], vec![0.7; 12]], 3, 4);
        let c = confidence_scores(&masks, 1);
        assert!(c[0].cells().iter().all(|&v| v == 0.3));

        let mut point = vec![0.0; 25];
        point[6] = 1.0; // (1, 1)
        let masks = masks_from(vec![point.iter().map(|p| 1.0 - p).collect(), point], 5, 5);
        let c = confidence_scores(&masks, 1);
        for y in 0..5 {
            for x in 0..5 {
                let expect = if y <= 2 && x <= 2 { 1.0 } else { 0.0 };
                assert_eq!(*c[1].get(y, x), expect, "({y},{x})");
            }
        }
    }

    #[test]
    fn confident_pixels_pass_through() {
        let masks = masks_from(vec![vec![0.9, 0.2, 0.6], vec![0.1, 0.8, 0.4]], 1, 3);
        let u = uncertainty_map(&masks);
        let feats = PixelFeatures {
            r: Grid::filled(1, 3, feat(&[1.0, 2.0])).unwrap(),
        };
        let cfg = RefineConfig {
            u_threshold: 1.0,
            ..Default::default()
        };
        let out = refine(&masks, &u, &feats, &cfg).unwrap();
        assert_eq!(out.refined_pixels, 0);
        assert_eq!(out.labels.cells(), &[0, 1, 0]);
        for (a, b) in out.masks.iter().zip(&masks.masks) {
            assert_eq!(a.cells(), b.cells());
        }
    }

    #[test]
    fn ambiguous_pixel_follows_matching_reference() {
        // center pixel (0.5, 0.5): its feature equals object 1's reference and
        // is opposite to the background reference.
        let masks = masks_from(vec![vec![1.0, 0.5, 0.0], vec![0.0, 0.5, 1.0]], 1, 3);
        let u = uncertainty_map(&masks);
        assert_eq!(*u.u.get(0, 1), 1.0);
        let feats = PixelFeatures {
            r: Grid::from_vec(1, 3, vec![feat(&[-1.0, 0.0]), feat(&[1.0, 0.0]), feat(&[1.0, 0.0])]).unwrap(),
        };
        let cfg = RefineConfig::default();
        let out = refine(&masks, &u, &feats, &cfg).unwrap();
        // S = (0.5 - 1, 0.5 + 1) before clamping
        assert_eq!(*out.labels.get(0, 1), 1);
        assert_eq!(*out.masks[0].get(0, 1), 0.0);
        assert_eq!(*out.masks[1].get(0, 1), 1.0);
        let terms = refinement_terms(&masks, &u, &feats, 1, 0.7).unwrap();
        let raw = apply_terms(&masks, &terms, &Scorer::FixedCosine);
        assert!((raw[0].get(0, 1) + 0.5).abs() < 1e-9);
        assert!((raw[1].get(0, 1) - 1.5).abs() < 1e-9);
    }

    #[test]
    fn untrainable_scorer_is_rejected() {
        let logits = vec![Grid::filled(2, 2, 0.0).unwrap(), Grid::filled(2, 2, 0.1).unwrap()];
        let masks = normalize(logits).unwrap();
        let sample = RefineSample {
            u: uncertainty_map(&masks),
            masks,
            feats: PixelFeatures {
                r: Grid::filled(2, 2, feat(&[1.0])).unwrap(),
            },
            gt: Grid::filled(2, 2, 1u8).unwrap(),
        };
        let err = train_scorer(&[sample], Scorer::FixedCosine, &RefineConfig::default(), 0.5, 3, 0.1);
        assert!(matches!(err, Err(Error::ScorerNotTrainable)));
        assert!(matches!(
            train_scorer(&[], Scorer::trainable(), &RefineConfig::default(), 0.5, 3, 0.1),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn scorer_serializes_with_kind_tag() {
        let s = Scorer::TrainableAffine { w: 2.0, b: -0.5 };
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(json, r#"{"kind":"trainable_affine","w":2.0,"b":-0.5}"#);
        assert_eq!(serde_json::from_str::<Scorer>(&json).unwrap(), s);
    }
}
