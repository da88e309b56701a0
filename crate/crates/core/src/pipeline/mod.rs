//! End-to-end segmentation of a video from its first-frame labels.
//!
//! Every label `0..=L` (0 is the background) owns a memory initialised from
//! frame 0. Each later frame runs
//!
//! ```text
//! extract -> match per memory -> record usage -> decode -> U -> refine -> absorb
//! ```
//!
//! where absorption feeds the predicted labels back into the memories.

mod extractor;
mod memory;

use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::feature_bank::BankConfig;
use crate::matcher::{match_features, MatchResult};
use crate::numerics::{bilinear_sample, cosine_or_zero, Grid, Vec32};
use crate::refinement::{refine, RefineConfig, RefineSample};
use crate::synthgen::{RgbImage, VideoSequence};
use crate::uncertainty::{normalize, uncertainty_map, ScoreMaps, DEFAULT_LAMBDA_U};

pub use extractor::{Extractor, ExtractorConfig, FrameFeatures, DESCRIPTOR_DIM, PIXEL_DIM};
pub use memory::{pool_to_budget, MemoryPolicy, MemoryStats, ObjectMemory};

pub const DEFAULT_TAU_D: f64 = 20.0;
/// Refinement radius used by the pipeline.
pub const PIPELINE_RADIUS: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    /// Key and value dims are taken from the extractor.
    pub bank: BankConfig,
    pub refine: RefineConfig,
    pub extractor: ExtractorConfig,
    /// Only used when training the scorer.
    pub lambda_u: f64,
    pub tau_d: f64,
    pub memory_policy: MemoryPolicy,
    /// Absorb on frames whose index is a multiple of this.
    pub absorb_interval: usize,
    /// Absorb ground-truth labels when they are supplied.
    pub absorb_ground_truth: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let extractor = ExtractorConfig::default();
        PipelineConfig {
            bank: BankConfig::new(extractor.d_k, extractor.d_v),
            refine: RefineConfig {
                radius: PIPELINE_RADIUS,
                ..Default::default()
            },
            extractor,
            lambda_u: DEFAULT_LAMBDA_U,
            tau_d: DEFAULT_TAU_D,
            memory_policy: MemoryPolicy::Afb,
            absorb_interval: 1,
            absorb_ground_truth: false,
        }
    }
}

impl PipelineConfig {
    pub fn bank_config(&self) -> BankConfig {
        let mut b = self.bank.clone();
        b.key_dim = self.extractor.d_k;
        b.value_dim = self.extractor.d_v;
        b
    }

    pub fn validate(&self) -> Result<()> {
        self.bank_config().validate()?;
        self.refine.validate()?;
        self.extractor.validate()?;
        if !(self.tau_d > 0.0 && self.tau_d.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "tau_d must be positive, got {}",
                self.tau_d
            )));
        }
        if !(self.lambda_u >= 0.0 && self.lambda_u.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "lambda_u must be non-negative, got {}",
                self.lambda_u
            )));
        }
        if self.absorb_interval == 0 {
            return Err(Error::InvalidConfig("absorb_interval must be at least 1".into()));
        }
        Ok(())
    }
}

/// Grid-resolution logits `tau_d · cos(v_query, v_retrieved_i)`.
pub fn decode_logits(query_values: &Grid<Vec32>, retrieved: &[&Grid<Vec32>], tau_d: f64) -> Result<Vec<Grid<f64>>> {
    retrieved
        .iter()
        .map(|r| {
            r.ensure_shape(query_values.shape())?;
            Grid::from_vec(
                r.height(),
                r.width(),
                query_values
                    .cells()
                    .iter()
                    .zip(r.cells())
                    .map(|(q, v)| tau_d * cosine_or_zero(q, v))
                    .collect(),
            )
        })
        .collect()
}

/// Decodes per-memory match results to pixel-resolution likelihoods.
pub fn decode(
    matches: &[MatchResult],
    query_values: &Grid<Vec32>,
    extractor: &Extractor,
    frame_shape: (usize, usize),
    tau_d: f64,
) -> Result<ScoreMaps> {
    if matches.len() < 2 {
        return Err(Error::TooFewMaps {
            needed: 2,
            got: matches.len(),
        });
    }
    let retrieved: Vec<&Grid<Vec32>> = matches.iter().map(|m| &m.retrieved).collect();
    let cells = decode_logits(query_values, &retrieved, tau_d)?;
    let (h, w) = frame_shape;
    let fy: Vec<f64> = (0..h).map(|y| extractor.pixel_to_cell(y)).collect();
    let fx: Vec<f64> = (0..w).map(|x| extractor.pixel_to_cell(x)).collect();
    let logits = cells
        .iter()
        .map(|g| Grid::from_fn(h, w, |y, x| bilinear_sample(g, fy[y], fx[x])))
        .collect::<Result<Vec<_>>>()?;
    normalize(logits)
}

#[derive(Clone, Debug)]
pub struct FrameResult {
    pub frame: usize,
    /// Final likelihoods per label, clamped to `[0, 1]`.
    pub masks: Vec<Grid<f64>>,
    pub labels: Grid<u8>,
    pub u_mean: f64,
    pub u_max: f64,
    /// One entry per label, background first.
    pub banks: Vec<MemoryStats>,
    pub refined_pixels: usize,
    pub elapsed: Duration,
}

impl FrameResult {
    pub fn stored_features(&self) -> usize {
        self.banks.iter().map(|b| b.size).sum()
    }
}

/// Streaming segmenter: feed frames in order after construction.
pub struct Segmenter {
    cfg: PipelineConfig,
    extractor: Extractor,
    memories: Vec<ObjectMemory>,
    num_objects: usize,
    shape: (usize, usize),
    next_frame: usize,
}

impl Segmenter {
    pub fn new(cfg: PipelineConfig, first: &RgbImage, labels: &Grid<u8>, num_objects: usize) -> Result<Self> {
        cfg.validate()?;
        if num_objects == 0 || num_objects >= u8::MAX as usize {
            return Err(Error::InvalidConfig(format!("invalid object count {num_objects}")));
        }
        labels.ensure_shape(first.shape())?;
        if let Some(&l) = labels.cells().iter().find(|&&l| l as usize > num_objects) {
            return Err(Error::LabelOutOfRange {
                label: l as usize,
                max: num_objects,
            });
        }
        let extractor = Extractor::new(cfg.extractor.clone())?;
        let refs = extractor.extract_references(first, labels, num_objects)?;
        let bank_cfg = cfg.bank_config();
        let memories = refs
            .into_iter()
            .enumerate()
            .map(|(k, feats)| {
                if feats.is_empty() {
                    return Err(Error::DegenerateFrame(format!(
                        "label {k} covers no patch of the first frame"
                    )));
                }
                ObjectMemory::new(cfg.memory_policy, &bank_cfg, feats, 0)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Segmenter {
            cfg,
            extractor,
            memories,
            num_objects,
            shape: first.shape(),
            next_frame: 1,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn memories(&self) -> &[ObjectMemory] {
        &self.memories
    }

    pub fn num_objects(&self) -> usize {
        self.num_objects
    }

    pub fn next_frame(&self) -> usize {
        self.next_frame
    }

    pub fn bank_stats(&self) -> Vec<MemoryStats> {
        self.memories.iter().map(ObjectMemory::stats).collect()
    }

    /// Segments the next frame. `gt` is only used for ground-truth absorption.
    pub fn step(&mut self, frame: &RgbImage, gt: Option<&Grid<u8>>) -> Result<FrameResult> {
        Ok(self.advance(frame, gt, false)?.0)
    }

    /// Like [`Segmenter::step`], also returning the pre-refinement state
    /// paired with `gt` for scorer training.
    pub fn step_with_sample(&mut self, frame: &RgbImage, gt: &Grid<u8>) -> Result<(FrameResult, RefineSample)> {
        let (result, sample) = self.advance(frame, Some(gt), true)?;
        Ok((result, sample.expect("sample requested")))
    }

    fn advance(
        &mut self,
        frame: &RgbImage,
        gt: Option<&Grid<u8>>,
        want_sample: bool,
    ) -> Result<(FrameResult, Option<RefineSample>)> {
        let start = Instant::now();
        frame.ensure_shape(self.shape)?;
        if let Some(g) = gt {
            g.ensure_shape(self.shape)?;
        }
        let t = self.next_frame;
        let feats = self.extractor.extract_query(frame)?;
        let epsilon_l = self.cfg.bank.epsilon_l;
        let matches: Vec<MatchResult> = self
            .memories
            .par_iter()
            .map(|m| match_features(&feats.query, m.bank(), epsilon_l))
            .collect::<Result<_>>()?;
        for (m, r) in self.memories.iter_mut().zip(&matches) {
            m.record_usage(&r.usage_counts)?;
        }
        let maps = decode(
            &matches,
            &feats.query.values,
            &self.extractor,
            self.shape,
            self.cfg.tau_d,
        )?;
        drop(matches);
        let u = uncertainty_map(&maps);
        let refined = refine(&maps, &u, &feats.pixels, &self.cfg.refine)?;

        if t % self.cfg.absorb_interval == 0 {
            let source = match gt {
                Some(g) if self.cfg.absorb_ground_truth => g,
                _ => &refined.labels,
            };
            let refs = self.extractor.extract_references(frame, source, self.num_objects)?;
            for (m, r) in self.memories.iter_mut().zip(refs) {
                m.absorb(r, t as u64)?;
            }
        }
        self.next_frame += 1;

        let (u_mean, u_max) = (u.mean(), u.max());
        let sample = match (want_sample, gt) {
            (true, Some(g)) => Some(RefineSample {
                masks: maps,
                u,
                feats: feats.pixels,
                gt: g.clone(),
            }),
            _ => None,
        };
        let result = FrameResult {
            frame: t,
            masks: refined.masks,
            labels: refined.labels,
            u_mean,
            u_max,
            banks: self.bank_stats(),
            refined_pixels: refined.refined_pixels,
            elapsed: start.elapsed(),
        };
        Ok((result, sample))
    }
}

/// Segments frames `1..T` of `video` from the labels of frame 0.
pub fn segment_video(video: &VideoSequence, cfg: &PipelineConfig) -> Result<Vec<FrameResult>> {
    let first = video.frames.first().ok_or(Error::Empty("video"))?;
    let labels = video
        .gt
        .first()
        .ok_or_else(|| Error::Video("missing first-frame annotation".into()))?;
    if video.frames.len() != video.gt.len() && cfg.absorb_ground_truth {
        return Err(Error::Video(
            "ground-truth absorption needs labels for every frame".into(),
        ));
    }
    let mut seg = Segmenter::new(cfg.clone(), first, labels, video.num_objects)?;
    video.frames[1..]
        .iter()
        .enumerate()
        .map(|(i, f)| seg.step(f, video.gt.get(i + 1)))
        .collect()
}
