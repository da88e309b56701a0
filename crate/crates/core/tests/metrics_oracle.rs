//! J, F and decay against brute-force definitions.

use afb_core::metrics::{boundary_f, decay, jaccard};
use afb_core::Grid;
use proptest::prelude::*;

fn mask(h: usize, w: usize, bits: &[bool]) -> Grid<bool> {
    Grid::from_vec(h, w, bits[..h * w].to_vec()).unwrap()
}

/// Boundary pixels: foreground with a 4-neighbour that is background or
/// off-image, found by padding the mask with a background ring.
fn boundary_points(m: &Grid<bool>) -> Vec<(i64, i64)> {
    let (h, w) = m.shape();
    let at =
        |y: i64, x: i64| y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w && *m.get(y as usize, x as usize);
    let mut out = Vec::new();
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            if at(y, x)
                && [(-1, 0), (1, 0), (0, -1), (0, 1)]
                    .iter()
                    .any(|&(dy, dx)| !at(y + dy, x + dx))
            {
                out.push((y, x));
            }
        }
    }
    out
}

fn matched(from: &[(i64, i64)], to: &[(i64, i64)], tol: i64) -> usize {
    from.iter()
        .filter(|a| to.iter().any(|b| (a.0 - b.0).pow(2) + (a.1 - b.1).pow(2) <= tol * tol))
        .count()
}

fn f_oracle(p: &Grid<bool>, g: &Grid<bool>, tol: i64) -> f64 {
    let (bp, bg) = (boundary_points(p), boundary_points(g));
    match (bp.is_empty(), bg.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let precision = matched(&bp, &bg, tol) as f64 / bp.len() as f64;
    let recall = matched(&bg, &bp, tol) as f64 / bg.len() as f64;
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

proptest! {
    #[test]
    fn boundary_f_matches_pairwise_search(
        h in 1usize..12,
        w in 1usize..12,
        tol in 0usize..5,
        a in prop::collection::vec(any::<bool>(), 144),
        b in prop::collection::vec(any::<bool>(), 144),
    ) {
        let (p, g) = (mask(h, w, &a), mask(h, w, &b));
        let got = boundary_f(&p, &g, tol).unwrap();
        prop_assert!((got - f_oracle(&p, &g, tol as i64)).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&got));
        prop_assert!((boundary_f(&g, &p, tol).unwrap() - got).abs() < 1e-12);
    }

    #[test]
    fn jaccard_matches_set_counts(
        h in 1usize..12,
        w in 1usize..12,
        a in prop::collection::vec(any::<bool>(), 144),
        b in prop::collection::vec(any::<bool>(), 144),
    ) {
        let (p, g) = (mask(h, w, &a), mask(h, w, &b));
        let pts = |m: &Grid<bool>| -> std::collections::BTreeSet<usize> {
            m.cells().iter().enumerate().filter(|c| *c.1).map(|c| c.0).collect()
        };
        let (sp, sg) = (pts(&p), pts(&g));
        let union = sp.union(&sg).count();
        let expect = if union == 0 { 1.0 } else { sp.intersection(&sg).count() as f64 / union as f64 };
        prop_assert_eq!(jaccard(&p, &g).unwrap(), expect);
    }

    #[test]
    fn decay_matches_array_split(scores in prop::collection::vec(0.0f64..1.0, 1..40)) {
        let n = scores.len();
        let k = n.min(4);
        let expect = if k < 2 {
            0.0
        } else {
            // Sizes of array_split(scores, k): the first n % k bins get one extra.
            let sizes: Vec<usize> = (0..k).map(|i| n / k + usize::from(i < n % k)).collect();
            let first = &scores[..sizes[0]];
            let last = &scores[n - sizes[k - 1]..];
            first.iter().sum::<f64>() / first.len() as f64 - last.iter().sum::<f64>() / last.len() as f64
        };
        prop_assert!((decay(&scores) - expect).abs() < 1e-12);
    }
}
