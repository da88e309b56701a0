use std::time::Instant;

use afb_core::pipeline::pool_to_budget;
use afb_core::synthgen::{FeatureStream, StreamSpec};
use afb_core::{match_features, BankConfig, FeatureBank, Grid, QueryFeatures, Vec32};
use serde::Serialize;

use crate::error::{CliError, CliResult};

pub const HELD_OUT_QUERIES: usize = 200;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchReport {
    pub stream: String,
    pub frames: usize,
    pub features_per_frame: usize,
    pub budget: usize,
    /// Merged share of the features absorbed after the first batch.
    pub merge_fraction: f64,
    pub final_size: usize,
    pub merges: u64,
    pub appends: u64,
    pub evictions: u64,
    /// Absorbed features per second; `None` when timing is omitted.
    pub throughput: Option<f64>,
    /// Share of held-out queries whose argmax label matches a store-all bank.
    pub oracle_agreement: f64,
}

/// 1×n query grid with zero values of the bank's value dimension.
fn query_grid(keys: Vec<Vec32>, value_dim: usize) -> CliResult<QueryFeatures> {
    let n = keys.len();
    let values = Grid::filled(1, n, Vec32::zeros(value_dim))?;
    Ok(QueryFeatures::new(Grid::from_vec(1, n, keys)?, values)?)
}

fn argmax(v: &Vec32) -> usize {
    v.iter()
        .enumerate()
        .fold(
            (0, f32::NEG_INFINITY),
            |best, (i, &x)| if x > best.1 { (i, x) } else { best },
        )
        .0
}

fn predict(bank: &FeatureBank, q: &QueryFeatures) -> CliResult<Vec<usize>> {
    let r = match_features(q, bank, bank.config().epsilon_l)?;
    Ok(r.retrieved.cells().iter().map(argmax).collect())
}

/// Streams `spec` through one bank. Each batch is first matched against the
/// bank to record usage, then absorbed. Key and value dims come from `spec`.
pub fn bench(spec: &StreamSpec, bank: &BankConfig, timing: bool) -> CliResult<BenchReport> {
    let stream = FeatureStream::new(spec.clone())?;
    if spec.frames == 0 {
        return Err(CliError::Usage("need at least one frame".into()));
    }
    let mut cfg = bank.clone();
    cfg.key_dim = spec.dim;
    cfg.value_dim = spec.clusters;
    let total = spec.frames * spec.features_per_frame;
    let oracle_cfg = BankConfig {
        epsilon_h: 2.0,
        budget: total,
        ..cfg.clone()
    };

    let first = stream.batch(0).into_iter().map(|(f, _)| f).collect::<Vec<_>>();
    let mut afb = FeatureBank::init(cfg.clone(), pool_to_budget(first.clone(), &cfg), 0)?;
    let mut oracle = FeatureBank::init(oracle_cfg, first, 0)?;
    let mut absorbed = 0usize;
    let mut elapsed = 0.0;
    for t in 1..spec.frames {
        let batch: Vec<_> = stream.batch(t).into_iter().map(|(f, _)| f).collect();
        let q = query_grid(batch.iter().map(|(k, _)| k.clone()).collect(), cfg.value_dim)?;
        let start = Instant::now();
        let usage = match_features(&q, &afb, cfg.epsilon_l)?.usage_counts;
        afb.record_usage(&usage)?;
        afb.absorb(batch.clone(), t as u64)?;
        elapsed += start.elapsed().as_secs_f64();
        absorbed += batch.len();
        oracle.absorb(batch, t as u64)?;
    }

    let held = stream.held_out(HELD_OUT_QUERIES);
    let q = query_grid(held.into_iter().map(|((k, _), _)| k).collect(), cfg.value_dim)?;
    let (a, o) = (predict(&afb, &q)?, predict(&oracle, &q)?);
    let agree = a.iter().zip(&o).filter(|(x, y)| x == y).count();

    let s = afb.stats();
    Ok(BenchReport {
        stream: spec.kind.name().into(),
        frames: spec.frames,
        features_per_frame: spec.features_per_frame,
        budget: cfg.budget,
        merge_fraction: if absorbed == 0 {
            0.0
        } else {
            s.merges as f64 / absorbed as f64
        },
        final_size: afb.len(),
        merges: s.merges,
        appends: s.appends,
        evictions: s.evictions,
        throughput: (timing && elapsed > 0.0).then(|| absorbed as f64 / elapsed),
        oracle_agreement: agree as f64 / a.len() as f64,
    })
}
