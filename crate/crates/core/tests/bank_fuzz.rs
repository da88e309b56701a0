//! Budget and eviction-order fuzzing, plus a naive reference model of the
//! bank with merging disabled.

use afb_core::feature_bank::{lfu_index, BankConfig, FeatureBank, FeaturePair};
use afb_core::{Rng, Vec32};
use proptest::prelude::*;

/// Naive bank: linear scans everywhere, eviction by repeated minimum.
#[derive(Clone, Debug)]
struct Model {
    budget: usize,
    now: u64,
    next_id: u64,
    // (id, cnt, birth)
    entries: Vec<(u64, f64, u64)>,
}

impl Model {
    fn new(budget: usize, n: usize) -> Self {
        Model {
            budget,
            now: 0,
            next_id: n as u64,
            entries: (0..n as u64).map(|id| (id, 0.0, 0)).collect(),
        }
    }

    fn evict(&mut self, needed: usize) -> Vec<u64> {
        let mut out = Vec::new();
        while self.entries.len() + needed > self.budget {
            let now = self.now;
            let key = |e: &(u64, f64, u64)| (e.1 / (now - e.2 + 1) as f64, e.2, e.0);
            let (pos, _) = self
                .entries
                .iter()
                .enumerate()
                .min_by(|a, b| {
                    let (x, y) = (key(a.1), key(b.1));
                    x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2))
                })
                .unwrap();
            out.push(self.entries.remove(pos).0);
        }
        out
    }

    fn absorb(&mut self, n: usize, frame: u64) -> Vec<u64> {
        self.now = frame;
        let n = n.min(self.budget);
        let evicted = if n > 0 { self.evict(n) } else { Vec::new() };
        for _ in 0..n {
            self.entries.push((self.next_id, 0.0, frame));
            self.next_id += 1;
        }
        evicted
    }

    fn record(&mut self, counts: &[u32]) {
        for (e, &c) in self.entries.iter_mut().zip(counts) {
            if c > 0 {
                e.1 += (c as f64 + 1.0).ln();
            }
        }
    }
}

fn features(rng: &mut Rng, n: usize, kd: usize) -> Vec<FeaturePair> {
    (0..n)
        .map(|_| {
            let k = Vec32::new((0..kd).map(|_| rng.normal()).collect()).unwrap();
            (k, Vec32::new(vec![rng.normal()]).unwrap())
        })
        .collect()
}

fn counts(rng: &mut Rng, n: usize) -> Vec<u32> {
    (0..n)
        .map(|_| if rng.below(3) == 0 { 0 } else { rng.below(100) as u32 })
        .collect()
}

/// Checks the eviction-order property of one operation: no matched entry is
/// evicted while a never-matched entry of equal-or-older birth survives.
fn check_eviction_order(before: &FeatureBank, after: &FeatureBank, evicted: &[u64]) {
    let survivors: Vec<_> = after.entries().iter().map(|e| e.id).collect();
    for e in before
        .entries()
        .iter()
        .filter(|e| evicted.contains(&e.id) && e.cnt > 0.0)
    {
        for z in before
            .entries()
            .iter()
            .filter(|z| z.cnt == 0.0 && survivors.contains(&z.id))
        {
            assert!(
                z.birth > e.birth,
                "matched entry {} (birth {}) evicted before never-matched {} (birth {})",
                e.id,
                e.birth,
                z.id,
                z.birth
            );
        }
    }
}

#[test]
fn budget_holds_over_randomized_operations() {
    let mut ops = 0usize;
    let mut config_seed = 0u64;
    while ops < 100_000 {
        let mut rng = Rng::new(0xB0D6E7).split(config_seed);
        config_seed += 1;
        let kd = 1 + rng.below(6);
        let budget = 1 + rng.below(64);
        let mut cfg = BankConfig::new(kd, 1).with_budget(budget);
        cfg.epsilon_h = [0.5, 0.8, 0.95, 0.99, 1.5][rng.below(5)];
        cfg.lambda_p = rng.range(0.0, 0.99);
        cfg.normalize_keys = rng.below(2) == 0;
        let n0 = 1 + rng.below(budget);
        let mut bank = FeatureBank::init(cfg, features(&mut rng, n0, kd), 0).unwrap();
        let mut frame = 0;
        for _ in 0..500 {
            let before = bank.clone();
            let evicted = match rng.below(3) {
                0 => {
                    frame += 1 + rng.below(3) as u64;
                    let n = rng.below(2 * budget + 2);
                    bank.absorb(features(&mut rng, n, kd), frame).unwrap().evicted
                }
                1 => {
                    let c = counts(&mut rng, bank.len());
                    bank.record_usage(&c).unwrap();
                    Vec::new()
                }
                _ => bank.evict(rng.below(budget + 1)).unwrap(),
            };
            assert!(bank.len() <= budget, "size {} > budget {budget}", bank.len());
            check_eviction_order(&before, &bank, &evicted);
            for e in bank.entries() {
                assert!(e.cnt >= 0.0 && e.birth <= bank.current_frame());
                assert!(lfu_index(e, bank.current_frame()) >= 0.0);
            }
            assert!(bank.entries().windows(2).all(|w| w[0].id < w[1].id));
            ops += 1;
        }
    }
}

#[derive(Clone, Debug)]
enum Op {
    Absorb(usize),
    Record(u64),
    Evict(usize),
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        (0usize..40).prop_map(Op::Absorb),
        any::<u64>().prop_map(Op::Record),
        (0usize..20).prop_map(Op::Evict),
    ]
}

proptest! {
    #[test]
    fn agrees_with_naive_model(budget in 1usize..20, n0 in 1usize..20, ops in prop::collection::vec(op(), 1..60), seed in any::<u64>()) {
        let n0 = n0.min(budget);
        let mut rng = Rng::new(seed);
        let mut cfg = BankConfig::new(3, 1).with_budget(budget);
        cfg.epsilon_h = 2.0;
        let mut bank = FeatureBank::init(cfg, features(&mut rng, n0, 3), 0).unwrap();
        let mut model = Model::new(budget, n0);
        let mut frame = 0;
        for op in ops {
            match op {
                Op::Absorb(n) => {
                    frame += 1;
                    let got = bank.absorb(features(&mut rng, n, 3), frame).unwrap();
                    prop_assert_eq!(got.evicted, model.absorb(n, frame));
                }
                Op::Record(s) => {
                    let c = counts(&mut Rng::new(s), bank.len());
                    bank.record_usage(&c).unwrap();
                    model.record(&c);
                }
                Op::Evict(n) => {
                    let n = n.min(budget);
                    prop_assert_eq!(bank.evict(n).unwrap(), model.evict(n));
                }
            }
            let ids: Vec<(u64, u64)> = bank.entries().iter().map(|e| (e.id, e.birth)).collect();
            let expect: Vec<(u64, u64)> = model.entries.iter().map(|e| (e.0, e.2)).collect();
            prop_assert_eq!(ids, expect);
            for (e, m) in bank.entries().iter().zip(&model.entries) {
                prop_assert!((e.cnt - m.1).abs() < 1e-9);
            }
        }
    }
}
