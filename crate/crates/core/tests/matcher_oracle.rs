//! Matcher against a brute-force softmax retrieval over a store-all list.

use afb_core::feature_bank::{BankConfig, FeatureBank, FeaturePair};
use afb_core::{match_features, Grid, QueryFeatures, Rng, Vec32};

fn random_vec(rng: &mut Rng, dim: usize) -> Vec32 {
    Vec32::new((0..dim).map(|_| rng.normal()).collect()).unwrap()
}

/// Weights `softmax_j(q · k_j)` in f64 and the weighted value sum.
fn oracle(q: &[f32], store: &[FeaturePair]) -> (Vec<f64>, Vec<f64>) {
    let scores: Vec<f64> = store
        .iter()
        .map(|(k, _)| q.iter().zip(k.iter()).map(|(&a, &b)| a as f64 * b as f64).sum())
        .collect();
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    let weights: Vec<f64> = exps.iter().map(|e| e / total).collect();
    let vd = store[0].1.dim();
    let mut out = vec![0f64; vd];
    for (w, (_, v)) in weights.iter().zip(store) {
        for (o, &x) in out.iter_mut().zip(v.iter()) {
            *o += w * x as f64;
        }
    }
    (weights, out)
}

struct Instance {
    store: Vec<FeaturePair>,
    query: QueryFeatures,
}

fn instance(seed: u64) -> Instance {
    let mut rng = Rng::new(seed);
    let kd = 1 + rng.below(16);
    let vd = 1 + rng.below(16);
    let n = 1 + rng.below(64);
    let (h, w) = (1 + rng.below(32), 1 + rng.below(32));
    // Scale keeps softmax weights spread over several entries.
    let scale = rng.range(0.1, 1.0);
    let store: Vec<FeaturePair> = (0..n)
        .map(|_| {
            let k = random_vec(&mut rng, kd)
                .into_inner()
                .into_iter()
                .map(|x| x * scale)
                .collect();
            (Vec32::new(k).unwrap(), random_vec(&mut rng, vd))
        })
        .collect();
    let keys = Grid::from_fn(h, w, |_, _| random_vec(&mut rng, kd)).unwrap();
    let values = Grid::from_fn(h, w, |_, _| random_vec(&mut rng, vd)).unwrap();
    Instance {
        store,
        query: QueryFeatures::new(keys, values).unwrap(),
    }
}

#[test]
fn matches_store_all_oracle_without_merging() {
    for seed in 0..100 {
        let inst = instance(seed);
        let (kd, vd) = (inst.store[0].0.dim(), inst.store[0].1.dim());
        let mut cfg = BankConfig::new(kd, vd).with_budget(inst.store.len());
        cfg.epsilon_h = 1.5;
        cfg.normalize_keys = false;
        // Stream the store in two halves so absorb is exercised too.
        let half = inst.store.len().div_ceil(2);
        let mut bank = FeatureBank::init(cfg, inst.store[..half].to_vec(), 0).unwrap();
        let report = bank.absorb(inst.store[half..].to_vec(), 1).unwrap();
        assert_eq!(report.merged, 0);
        assert_eq!(bank.len(), inst.store.len());

        let eps_l = 1e-4f32;
        let got = match_features(&inst.query, &bank, eps_l).unwrap();
        let mut counts = vec![0u32; inst.store.len()];
        let mut near_threshold = false;
        for (q, r) in inst.query.keys.cells().iter().zip(got.retrieved.cells()) {
            let (weights, expect) = oracle(q, &inst.store);
            for (a, b) in r.iter().zip(&expect) {
                assert!((*a as f64 - b).abs() < 1e-5, "seed {seed}: {a} vs {b}");
            }
            for (c, w) in counts.iter_mut().zip(&weights) {
                near_threshold |= (w - eps_l as f64).abs() < 1e-6;
                *c += (*w > eps_l as f64) as u32;
            }
        }
        if !near_threshold {
            assert_eq!(got.usage_counts, counts, "seed {seed}");
        }
        for (c, (q, r)) in got
            .concat
            .cells()
            .iter()
            .zip(inst.query.values.cells().iter().zip(got.retrieved.cells()))
        {
            assert_eq!(&c[..vd], q.as_slice());
            assert_eq!(&c[vd..], r.as_slice());
        }
    }
}

#[test]
fn single_entry_returns_its_value() {
    let cfg = BankConfig::new(2, 3);
    let v = Vec32::new(vec![0.5, -1.0, 2.0]).unwrap();
    let bank = FeatureBank::init(cfg, vec![(Vec32::new(vec![1.0, 0.0]).unwrap(), v.clone())], 0).unwrap();
    let keys = Grid::from_fn(3, 2, |y, x| Vec32::new(vec![y as f32 - 1.0, x as f32]).unwrap()).unwrap();
    let values = Grid::filled(3, 2, Vec32::zeros(3)).unwrap();
    let got = match_features(&QueryFeatures::new(keys, values).unwrap(), &bank, 1e-4).unwrap();
    assert!(got.retrieved.cells().iter().all(|r| *r == v));
    assert_eq!(got.usage_counts, vec![6]);
}
