//! Region (J) and boundary (F) accuracy with mean / recall / decay aggregates.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Grid;

pub const DEFAULT_TAU: f64 = 0.5;

/// `ceil(0.8%` of the image diagonal`)`, at least 1.
pub fn default_tolerance(height: usize, width: usize) -> usize {
    let diag = ((height * height + width * width) as f64).sqrt();
    ((0.008 * diag).ceil() as usize).max(1)
}

pub fn object_mask(labels: &Grid<u8>, object: u8) -> Grid<bool> {
    labels.map(|&l| l == object)
}

/// Intersection over union; 1 when both masks are empty.
pub fn jaccard(pred: &Grid<bool>, gt: &Grid<bool>) -> Result<f64> {
    gt.ensure_shape(pred.shape())?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &g) in pred.cells().iter().zip(gt.cells()) {
        inter += (p && g) as usize;
        union += (p || g) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Foreground pixels with a 4-neighbour outside the mask. Pixels past the
/// image edge count as outside.
pub fn boundary(mask: &Grid<bool>) -> Grid<bool> {
    let (h, w) = mask.shape();
    Grid::from_fn(h, w, |y, x| {
        if !*mask.get(y, x) {
            return false;
        }
        y == 0
            || x == 0
            || y + 1 == h
            || x + 1 == w
            || !*mask.get(y - 1, x)
            || !*mask.get(y + 1, x)
            || !*mask.get(y, x - 1)
            || !*mask.get(y, x + 1)
    })
    .expect("shape of an existing grid")
}

/// Fraction of `from` pixels with an `to` pixel within Euclidean distance `tol`.
fn matched_fraction(from: &Grid<bool>, to: &Grid<bool>, tol: usize) -> (usize, usize) {
    let (h, w) = from.shape();
    let t = tol as isize;
    let offsets: Vec<(isize, isize)> = (-t..=t)
        .flat_map(|dy| (-t..=t).map(move |dx| (dy, dx)))
        .filter(|&(dy, dx)| dy * dy + dx * dx <= t * t)
        .collect();
    let (mut total, mut hit) = (0, 0);
    for y in 0..h {
        for x in 0..w {
            if !*from.get(y, x) {
                continue;
            }
            total += 1;
            let found = offsets.iter().any(|&(dy, dx)| {
                let (yy, xx) = (y as isize + dy, x as isize + dx);
                yy >= 0 && xx >= 0 && (yy as usize) < h && (xx as usize) < w && *to.get(yy as usize, xx as usize)
            });
            hit += found as usize;
        }
    }
    (hit, total)
}

/// Boundary F-measure with a dilation tolerance in pixels.
pub fn boundary_f(pred: &Grid<bool>, gt: &Grid<bool>, tolerance: usize) -> Result<f64> {
    gt.ensure_shape(pred.shape())?;
    let (h, w) = pred.shape();
    // Anything beyond the diagonal already covers the whole image.
    let tol = tolerance.min(h + w);
    let bp = boundary(pred);
    let bg = boundary(gt);
    let (pred_hit, pred_total) = matched_fraction(&bp, &bg, tol);
    let (gt_hit, gt_total) = matched_fraction(&bg, &bp, tol);
    if pred_total == 0 && gt_total == 0 {
        return Ok(1.0);
    }
    if pred_total == 0 || gt_total == 0 {
        return Ok(0.0);
    }
    let precision = pred_hit as f64 / pred_total as f64;
    let recall = gt_hit as f64 / gt_total as f64;
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * precision * recall / (precision + recall))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    #[serde(rename = "M")]
    pub mean: f64,
    #[serde(rename = "R")]
    pub recall: f64,
    #[serde(rename = "D")]
    pub decay: f64,
}

/// First minus last of `min(4, T)` near-equal temporal bins.
pub fn decay(scores: &[f64]) -> f64 {
    let n = scores.len();
    let bins = n.min(4);
    if bins < 2 {
        return 0.0;
    }
    let bin = |i: usize| {
        // Leading bins take the remainder, like numpy's array_split.
        let (base, extra) = (n / bins, n % bins);
        let start = i * base + i.min(extra);
        let len = base + (i < extra) as usize;
        scores[start..start + len].iter().sum::<f64>() / len as f64
    };
    bin(0) - bin(bins - 1)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Aggregates one object's per-frame scores.
pub fn aggregate(scores: &[f64], tau: f64) -> Result<Aggregate> {
    aggregate_objects(&[scores.to_vec()], tau)
}

/// Averages per-object mean and decay; recall is the fraction of objects
/// whose mean exceeds `tau`.
pub fn aggregate_objects(per_object: &[Vec<f64>], tau: f64) -> Result<Aggregate> {
    if per_object.is_empty() || per_object.iter().any(|s| s.is_empty()) {
        return Err(Error::Empty("score list"));
    }
    let means: Vec<f64> = per_object.iter().map(|s| mean(s)).collect();
    let decays: Vec<f64> = per_object.iter().map(|s| decay(s)).collect();
    Ok(Aggregate {
        mean: mean(&means),
        recall: means.iter().filter(|&&m| m > tau).count() as f64 / means.len() as f64,
        decay: mean(&decays),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectReport {
    pub object: u8,
    #[serde(rename = "J")]
    pub j: Aggregate,
    #[serde(rename = "F")]
    pub f: Aggregate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(rename = "J")]
    pub j: Aggregate,
    #[serde(rename = "F")]
    pub f: Aggregate,
    #[serde(rename = "JF_M")]
    pub jf_mean: f64,
    pub frames: usize,
    pub tolerance_px: usize,
    pub objects: Vec<ObjectReport>,
}

/// Per-frame, per-object scores: `j[object][frame]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceScores {
    pub j: Vec<Vec<f64>>,
    pub f: Vec<Vec<f64>>,
}

/// Scores paired label maps for objects `1..=num_objects`.
pub fn score_sequence(
    pred: &[Grid<u8>],
    gt: &[Grid<u8>],
    num_objects: usize,
    tolerance: usize,
) -> Result<SequenceScores> {
    if pred.len() != gt.len() {
        return Err(Error::LengthMismatch {
            expected: gt.len(),
            got: pred.len(),
        });
    }
    if pred.is_empty() {
        return Err(Error::Empty("frame list"));
    }
    if num_objects == 0 || num_objects > u8::MAX as usize {
        return Err(Error::InvalidConfig(format!("invalid object count {num_objects}")));
    }
    let per_frame: Vec<Vec<(f64, f64)>> = pred
        .par_iter()
        .zip(gt)
        .map(|(p, g)| {
            (1..=num_objects as u8)
                .map(|k| {
                    let pm = object_mask(p, k);
                    let gm = object_mask(g, k);
                    Ok((jaccard(&pm, &gm)?, boundary_f(&pm, &gm, tolerance)?))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let mut j = vec![Vec::with_capacity(pred.len()); num_objects];
    let mut f = vec![Vec::with_capacity(pred.len()); num_objects];
    for frame in per_frame {
        for (k, (jv, fv)) in frame.into_iter().enumerate() {
            j[k].push(jv);
            f[k].push(fv);
        }
    }
    Ok(SequenceScores { j, f })
}

pub fn report(scores: &SequenceScores, tau: f64, tolerance: usize) -> Result<EvalReport> {
    let j = aggregate_objects(&scores.j, tau)?;
    let f = aggregate_objects(&scores.f, tau)?;
    let objects = scores
        .j
        .iter()
        .zip(&scores.f)
        .enumerate()
        .map(|(k, (js, fs))| {
            Ok(ObjectReport {
                object: k as u8 + 1,
                j: aggregate(js, tau)?,
                f: aggregate(fs, tau)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(EvalReport {
        jf_mean: (j.mean + f.mean) / 2.0,
        j,
        f,
        frames: scores.j[0].len(),
        tolerance_px: tolerance,
        objects,
    })
}

/// Scores and aggregates in one call, using the default tolerance.
pub fn evaluate(pred: &[Grid<u8>], gt: &[Grid<u8>], num_objects: usize) -> Result<EvalReport> {
    let first = gt.first().ok_or(Error::Empty("frame list"))?;
    let tol = default_tolerance(first.height(), first.width());
    report(&score_sequence(pred, gt, num_objects, tol)?, DEFAULT_TAU, tol)
}
