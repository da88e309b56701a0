//! Fixtures shared by the benchmarks.

use afb_core::synthgen::{FeatureStream, StreamKind, StreamSpec};
use afb_core::{BankConfig, FeatureBank, Grid, QueryFeatures, Vec32};

pub const DIM: usize = 32;

pub fn stream(kind: StreamKind, features_per_frame: usize) -> FeatureStream {
    FeatureStream::new(StreamSpec {
        kind,
        dim: DIM,
        features_per_frame,
        ..Default::default()
    })
    .expect("valid stream spec")
}

/// A bank holding `n` uniform-stream entries with merging disabled.
pub fn filled_bank(n: usize) -> FeatureBank {
    let s = stream(StreamKind::Uniform, n);
    let feats = s.batch(0).into_iter().map(|(f, _)| f).collect();
    let mut cfg = BankConfig::new(DIM, s.spec().clusters).with_budget(n);
    cfg.epsilon_h = 2.0;
    FeatureBank::init(cfg, feats, 0).expect("bank fits its budget")
}

/// `h × w` query lattice of random keys.
pub fn queries(h: usize, w: usize, value_dim: usize) -> QueryFeatures {
    let s = stream(StreamKind::Uniform, h * w);
    let keys = s.held_out(h * w).into_iter().map(|((k, _), _)| k).collect();
    QueryFeatures::new(
        Grid::from_vec(h, w, keys).expect("h * w keys"),
        Grid::filled(h, w, Vec32::zeros(value_dim)).expect("nonempty grid"),
    )
    .expect("matching shapes")
}
