//! Labelled synthetic feature streams for exercising a bank without video.
//!
//! Keys are rescaled to unit RMS like extractor keys. Each feature carries
//! a label in `0..clusters`, stored as a one-hot value so that retrieval
//! can be scored by the argmax of the retrieved value.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_bank::{unit_rms, FeaturePair};
use crate::numerics::{Rng, Vec32};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamKind {
    /// Fixed cluster centers plus small isotropic noise.
    Clustered,
    /// Cluster centers follow a random walk.
    Drifting,
    /// Independent Gaussian directions with random labels.
    Uniform,
}

impl StreamKind {
    pub fn name(self) -> &'static str {
        match self {
            StreamKind::Clustered => "clustered",
            StreamKind::Drifting => "drifting",
            StreamKind::Uniform => "uniform",
        }
    }
}

impl FromStr for StreamKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "clustered" => Ok(StreamKind::Clustered),
            "drifting" => Ok(StreamKind::Drifting),
            "uniform" => Ok(StreamKind::Uniform),
            _ => Err(Error::InvalidConfig(format!(
                "unknown stream '{s}' (clustered|drifting|uniform)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamSpec {
    pub kind: StreamKind,
    pub dim: usize,
    pub clusters: usize,
    /// Norm of the noise relative to the unit-norm center.
    pub sigma: f32,
    /// Per-frame step of each center's random walk, relative to its norm.
    pub drift: f32,
    pub features_per_frame: usize,
    pub frames: usize,
    pub seed: u64,
}

impl Default for StreamSpec {
    fn default() -> Self {
        StreamSpec {
            kind: StreamKind::Clustered,
            dim: 32,
            clusters: 8,
            sigma: 0.05,
            drift: 0.02,
            features_per_frame: 50,
            frames: 200,
            seed: 0,
        }
    }
}

impl StreamSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.clusters == 0 || self.features_per_frame == 0 {
            return Err(Error::InvalidConfig(
                "stream dim, clusters and batch size must be positive".into(),
            ));
        }
        if !(self.sigma >= 0.0 && self.drift >= 0.0) {
            return Err(Error::InvalidConfig(
                "stream sigma and drift must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

fn unit(mut v: Vec<f32>) -> Vec<f32> {
    let n = v.iter().map(|x| x * x).sum::<f32>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

/// Frame-by-frame generator. Batch `t` depends only on the spec and `t`.
#[derive(Clone, Debug)]
pub struct FeatureStream {
    spec: StreamSpec,
    rng: Rng,
    /// Centers per frame, `centers[t][c]`.
    centers: Vec<Vec<Vec<f32>>>,
}

impl FeatureStream {
    pub fn new(spec: StreamSpec) -> Result<Self> {
        spec.validate()?;
        let rng = Rng::new(spec.seed);
        let mut crng = rng.split(0);
        let first: Vec<Vec<f32>> = (0..spec.clusters)
            .map(|_| unit((0..spec.dim).map(|_| crng.normal()).collect()))
            .collect();
        let mut centers = vec![first];
        if spec.kind == StreamKind::Drifting {
            let step = spec.drift / (spec.dim as f32).sqrt();
            for _ in 1..spec.frames.max(1) {
                let prev = centers.last().expect("seeded with frame 0");
                let next = prev
                    .iter()
                    .map(|c| unit(c.iter().map(|&x| x + step * crng.normal()).collect()))
                    .collect();
                centers.push(next);
            }
        }
        Ok(FeatureStream { spec, rng, centers })
    }

    pub fn spec(&self) -> &StreamSpec {
        &self.spec
    }

    fn centers_at(&self, t: usize) -> &[Vec<f32>] {
        &self.centers[t.min(self.centers.len() - 1)]
    }

    fn sample(&self, rng: &mut Rng, t: usize) -> (FeaturePair, usize) {
        let s = &self.spec;
        let (key, label) = match s.kind {
            StreamKind::Uniform => (
                (0..s.dim).map(|_| rng.normal()).collect::<Vec<_>>(),
                rng.below(s.clusters),
            ),
            _ => {
                let label = rng.below(s.clusters);
                let noise = s.sigma / (s.dim as f32).sqrt();
                let key = self.centers_at(t)[label]
                    .iter()
                    .map(|&c| c + noise * rng.normal())
                    .collect();
                (key, label)
            }
        };
        let mut key = key;
        unit_rms(&mut key);
        let mut value = vec![0f32; s.clusters];
        value[label] = 1.0;
        ((Vec32::from_raw(key), Vec32::from_raw(value)), label)
    }

    /// The `features_per_frame` features of frame `t` with their labels.
    pub fn batch(&self, t: usize) -> Vec<(FeaturePair, usize)> {
        let mut rng = self.rng.split(1 + t as u64);
        (0..self.spec.features_per_frame)
            .map(|_| self.sample(&mut rng, t))
            .collect()
    }

    /// Held-out features drawn at the last frame, disjoint from every batch.
    pub fn held_out(&self, n: usize) -> Vec<(FeaturePair, usize)> {
        let mut rng = self.rng.split(u64::MAX - 1);
        let t = self.spec.frames.saturating_sub(1);
        (0..n).map(|_| self.sample(&mut rng, t)).collect()
    }
}
