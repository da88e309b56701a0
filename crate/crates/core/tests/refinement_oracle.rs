//! Refinement against a direct per-pixel evaluation with explicit windows.

use afb_core::refinement::{confidence_scores, local_reference, refine, RefineConfig, Scorer};
use afb_core::uncertainty::{normalize, uncertainty_map};
use afb_core::{Grid, PixelFeatures, ScoreMaps, Vec32};
use proptest::prelude::*;

fn neighbours(h: usize, w: usize, y: usize, x: usize, r: usize) -> Vec<(usize, usize)> {
    let r = r as i64;
    let mut out = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            let (qy, qx) = (y as i64 + dy, x as i64 + dx);
            if qy >= 0 && qx >= 0 && (qy as usize) < h && (qx as usize) < w {
                out.push((qy as usize, qx as usize));
            }
        }
    }
    out
}

fn cos(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        d / (na * nb)
    }
}

/// Final scores `M + U · c · score(cos(r, y))` for pixels above the threshold.
fn oracle(maps: &ScoreMaps, u: &Grid<f64>, r: &Grid<Vec32>, cfg: &RefineConfig) -> Vec<Grid<f64>> {
    let (h, w) = maps.shape();
    let mut out = maps.masks.clone();
    for y in 0..h {
        for x in 0..w {
            let up = *u.get(y, x);
            if up <= cfg.u_threshold {
                continue;
            }
            let rp: Vec<f64> = r.get(y, x).iter().map(|&v| v as f64).collect();
            let win = neighbours(h, w, y, x, cfg.radius);
            for (i, m) in maps.masks.iter().enumerate() {
                let c = win
                    .iter()
                    .map(|&(qy, qx)| *m.get(qy, qx))
                    .fold(f64::NEG_INFINITY, f64::max);
                let total: f64 = win.iter().map(|&(qy, qx)| *m.get(qy, qx)).sum();
                if total < 1e-8 {
                    continue;
                }
                let mut yi = vec![0f64; rp.len()];
                for &(qy, qx) in &win {
                    for (a, &v) in yi.iter_mut().zip(r.get(qy, qx).iter()) {
                        *a += m.get(qy, qx) * v as f64 / total;
                    }
                }
                *out[i].get_mut(y, x) += up * c * cfg.scorer.score(cos(&rp, &yi));
            }
        }
    }
    out
}

fn inputs(l: usize, h: usize, w: usize, logits: &[f64], feats: &[f32]) -> (ScoreMaps, PixelFeatures) {
    let maps = normalize(
        (0..l)
            .map(|k| Grid::from_vec(h, w, logits[k * h * w..(k + 1) * h * w].to_vec()).unwrap())
            .collect(),
    )
    .unwrap();
    let r = Grid::from_fn(h, w, |y, x| {
        let i = (y * w + x) * 3;
        Vec32::new(feats[i..i + 3].to_vec()).unwrap()
    })
    .unwrap();
    (maps, PixelFeatures { r })
}

proptest! {
    #[test]
    fn refine_matches_direct_evaluation(
        l in 2usize..4,
        h in 1usize..7,
        w in 1usize..7,
        radius in 1usize..3,
        threshold in 0.0f64..1.0,
        affine in prop::option::of((-3.0f64..3.0, -1.0f64..1.0)),
        logits in prop::collection::vec(-2.0f64..2.0, 3 * 36),
        feats in prop::collection::vec(-1.0f32..1.0, 3 * 36),
    ) {
        let (maps, pf) = inputs(l, h, w, &logits, &feats);
        let u = uncertainty_map(&maps);
        let scorer = affine.map_or(Scorer::FixedCosine, |(w, b)| Scorer::TrainableAffine { w, b });
        let cfg = RefineConfig { radius, u_threshold: threshold, scorer };
        let got = refine(&maps, &u, &pf, &cfg).unwrap();
        let expect = oracle(&maps, &u.u, &pf.r, &cfg);
        for idx in 0..h * w {
            let s: Vec<f64> = expect.iter().map(|g| g.cells()[idx]).collect();
            for (g, e) in got.masks.iter().zip(&s) {
                prop_assert!((g.cells()[idx] - e.clamp(0.0, 1.0)).abs() < 1e-9);
            }
            let mut sorted = s.clone();
            sorted.sort_by(|a, b| b.total_cmp(a));
            if sorted[0] - sorted[1] > 1e-9 {
                let best = s.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
                prop_assert_eq!(got.labels.cells()[idx] as usize, best);
            }
        }
        let flagged = u.u.cells().iter().filter(|&&v| v > threshold).count();
        prop_assert_eq!(got.refined_pixels, flagged);
    }

    #[test]
    fn window_max_and_reference_match_brute_force(
        h in 1usize..7,
        w in 1usize..7,
        radius in 1usize..4,
        logits in prop::collection::vec(-2.0f64..2.0, 2 * 36),
        feats in prop::collection::vec(-1.0f32..1.0, 3 * 36),
    ) {
        let (maps, pf) = inputs(2, h, w, &logits, &feats);
        let c = confidence_scores(&maps, radius);
        let refs = local_reference(&maps, &pf, radius).unwrap();
        for (k, m) in maps.masks.iter().enumerate() {
            for y in 0..h {
                for x in 0..w {
                    let win = neighbours(h, w, y, x, radius);
                    let mx = win.iter().map(|&(qy, qx)| *m.get(qy, qx)).fold(f64::NEG_INFINITY, f64::max);
                    prop_assert_eq!(*c[k].get(y, x), mx);
                    let total: f64 = win.iter().map(|&(qy, qx)| *m.get(qy, qx)).sum();
                    for d in 0..3 {
                        let e: f64 = win.iter().map(|&(qy, qx)| m.get(qy, qx) * pf.r.get(qy, qx)[d] as f64).sum::<f64>() / total;
                        prop_assert!((refs.refs[k].get(y, x)[d] as f64 - e).abs() < 1e-5);
                    }
                }
            }
        }
    }
}
