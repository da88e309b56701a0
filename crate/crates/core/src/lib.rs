//! Video object segmentation with a bounded, self-maintaining feature memory
//! and refinement of uncertain pixels.
//!
//! Layers, bottom up: [`numerics`], [`feature_bank`], [`matcher`],
//! [`uncertainty`], [`refinement`], then the end-to-end [`pipeline`].
//! [`synthgen`] renders synthetic videos with exact labels and [`metrics`]
//! scores predictions against them.

pub mod error;
pub mod feature_bank;
pub mod matcher;
pub mod metrics;
pub mod numerics;
pub mod pipeline;
pub mod refinement;
pub mod synthgen;
pub mod uncertainty;

pub use error::{Error, Result};
pub use feature_bank::{BankConfig, BankStats, FeatureBank, FeatureEntry};
pub use matcher::{match_features, MatchResult, QueryFeatures};
pub use metrics::{EvalReport, SequenceScores};
pub use numerics::{Grid, Rng, Vec32};
pub use pipeline::{segment_video, FrameResult, MemoryPolicy, PipelineConfig, Segmenter};
pub use refinement::{PixelFeatures, RefineConfig, Scorer};
pub use synthgen::{RgbImage, SceneSpec, VideoSequence};
pub use uncertainty::{ScoreMaps, UncertaintyMap};
