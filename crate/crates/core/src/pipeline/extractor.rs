//! Deterministic patch descriptors standing in for a learned encoder.
//!
//! Cells sit on a `stride` lattice; each covers a `patch × patch` window.
//! The 16-dim descriptor of a cell is
//!
//! ```text
//! [ 2(mean RGB - 0.5) | 4 · std RGB | 4 · orientation histogram (8) | pos_weight · position (2) ]
//! ```
//!
//! Keys and values are fixed Gaussian projections of the descriptor. Keys are
//! rescaled to unit RMS, so a key's dot product with itself equals `d_k`.
//!
//! Reference cells are selected by mask coverage but described over the
//! whole patch, exactly as the query encodes them. Cells straddling two
//! labels therefore land in both memories and decode as ties.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_bank::FeaturePair;
use crate::matcher::QueryFeatures;
use crate::numerics::{Grid, Rng, Vec32};
use crate::refinement::PixelFeatures;
use crate::synthgen::RgbImage;

pub const DESCRIPTOR_DIM: usize = 16;
pub const PIXEL_DIM: usize = 6;
const ORIENTATION_BINS: usize = 8;
const GAIN_STD: f32 = 4.0;
const GAIN_HIST: f32 = 4.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtractorConfig {
    pub stride: usize,
    pub patch: usize,
    pub d_k: usize,
    pub d_v: usize,
    pub proj_seed: u64,
    /// Minimum object fraction of a patch for it to enter a reference set.
    pub coverage_min: f32,
    /// Scale of the position entries in descriptors and pixel features.
    pub pos_weight: f32,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        ExtractorConfig {
            stride: 4,
            patch: 8,
            d_k: 32,
            d_v: 32,
            proj_seed: 0,
            coverage_min: 0.25,
            pos_weight: 0.5,
        }
    }
}

impl ExtractorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.stride == 0 || self.patch == 0 {
            return bad("stride and patch must be at least 1".into());
        }
        if self.d_k == 0 || self.d_v == 0 {
            return bad("d_k and d_v must be at least 1".into());
        }
        if !(self.coverage_min > 0.0 && self.coverage_min <= 1.0) {
            return bad(format!("coverage_min must be in (0, 1], got {}", self.coverage_min));
        }
        if !(self.pos_weight >= 0.0 && self.pos_weight.is_finite()) {
            return bad(format!("invalid pos_weight {}", self.pos_weight));
        }
        Ok(())
    }
}

/// Float planes and gradients of one frame.
struct Planes {
    h: usize,
    w: usize,
    rgb: Vec<[f32; 3]>,
    grad_mag: Vec<f32>,
    grad_bin: Vec<u8>,
    mean_rgb: [f32; 3],
}

impl Planes {
    fn new(frame: &RgbImage) -> Self {
        let (h, w) = frame.shape();
        let rgb: Vec<[f32; 3]> = frame
            .cells()
            .iter()
            .map(|p| [p[0] as f32 / 255.0, p[1] as f32 / 255.0, p[2] as f32 / 255.0])
            .collect();
        let luma: Vec<f32> = rgb.iter().map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]).collect();
        let mut grad_mag = vec![0f32; h * w];
        let mut grad_bin = vec![0u8; h * w];
        for y in 0..h {
            for x in 0..w {
                let at = |yy: usize, xx: usize| luma[yy * w + xx];
                let gx = (at(y, (x + 1).min(w - 1)) - at(y, x.saturating_sub(1))) * 0.5;
                let gy = (at((y + 1).min(h - 1), x) - at(y.saturating_sub(1), x)) * 0.5;
                grad_mag[y * w + x] = (gx * gx + gy * gy).sqrt();
                let theta = gy.atan2(gx) + std::f32::consts::PI;
                let bin = (theta / std::f32::consts::TAU * ORIENTATION_BINS as f32) as usize;
                grad_bin[y * w + x] = bin.min(ORIENTATION_BINS - 1) as u8;
            }
        }
        let mut sum = [0f64; 3];
        for p in &rgb {
            for c in 0..3 {
                sum[c] += p[c] as f64;
            }
        }
        let n = (h * w) as f64;
        let mean_rgb = [(sum[0] / n) as f32, (sum[1] / n) as f32, (sum[2] / n) as f32];
        Planes {
            h,
            w,
            rgb,
            grad_mag,
            grad_bin,
            mean_rgb,
        }
    }
}

/// Fixed projections plus lattice geometry for frames of one size.
#[derive(Clone, Debug)]
pub struct Extractor {
    cfg: ExtractorConfig,
    key_proj: Vec<f32>,
    value_proj: Vec<f32>,
}

/// Query-side outputs for one frame.
#[derive(Clone, Debug)]
pub struct FrameFeatures {
    pub query: QueryFeatures,
    pub pixels: PixelFeatures,
}

impl Extractor {
    pub fn new(cfg: ExtractorConfig) -> Result<Self> {
        cfg.validate()?;
        let rng = Rng::new(cfg.proj_seed);
        let mut kr = rng.split(0);
        let mut vr = rng.split(1);
        let key_proj = (0..cfg.d_k * DESCRIPTOR_DIM).map(|_| kr.normal()).collect();
        let value_proj = (0..cfg.d_v * DESCRIPTOR_DIM).map(|_| vr.normal()).collect();
        Ok(Extractor {
            cfg,
            key_proj,
            value_proj,
        })
    }

    pub fn config(&self) -> &ExtractorConfig {
        &self.cfg
    }

    /// Lattice shape for a `h × w` frame.
    pub fn grid_shape(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let p = self.cfg.patch;
        if h < p || w < p {
            return Err(Error::DegenerateFrame(format!(
                "{w}x{h} frame is smaller than the {p}px patch"
            )));
        }
        Ok(((h - p) / self.cfg.stride + 1, (w - p) / self.cfg.stride + 1))
    }

    /// Continuous lattice coordinate of a pixel center.
    pub fn pixel_to_cell(&self, p: usize) -> f64 {
        (p as f64 + 0.5 - self.cfg.patch as f64 / 2.0) / self.cfg.stride as f64
    }

    fn descriptor(&self, planes: &Planes, gy: usize, gx: usize) -> [f32; DESCRIPTOR_DIM] {
        let (p, s) = (self.cfg.patch, self.cfg.stride);
        let (y0, x0) = (gy * s, gx * s);
        let mut sum = [0f32; 3];
        let mut sq = [0f32; 3];
        let mut hist = [0f32; ORIENTATION_BINS];
        for y in y0..y0 + p {
            for x in x0..x0 + p {
                let i = y * planes.w + x;
                let c = planes.rgb[i];
                for k in 0..3 {
                    sum[k] += c[k];
                    sq[k] += c[k] * c[k];
                }
                hist[planes.grad_bin[i] as usize] += planes.grad_mag[i];
            }
        }
        let n = (p * p) as f32;
        let mut d = [0f32; DESCRIPTOR_DIM];
        for k in 0..3 {
            let mean = sum[k] / n;
            d[k] = 2.0 * (mean - 0.5);
            d[3 + k] = GAIN_STD * (sq[k] / n - mean * mean).max(0.0).sqrt();
        }
        for (b, v) in hist.iter().enumerate() {
            d[6 + b] = GAIN_HIST * v / n;
        }
        let cy = (y0 as f32 + p as f32 / 2.0) / planes.h as f32 - 0.5;
        let cx = (x0 as f32 + p as f32 / 2.0) / planes.w as f32 - 0.5;
        d[14] = self.cfg.pos_weight * cy;
        d[15] = self.cfg.pos_weight * cx;
        d
    }

    /// Mean of `mask` over the patch of cell `(gy, gx)`.
    fn coverage(&self, mask: &Grid<f32>, gy: usize, gx: usize) -> f32 {
        let (p, s) = (self.cfg.patch, self.cfg.stride);
        let (y0, x0) = (gy * s, gx * s);
        let mut sum = 0f32;
        for y in y0..y0 + p {
            for x in x0..x0 + p {
                sum += mask.get(y, x).clamp(0.0, 1.0);
            }
        }
        sum / (p * p) as f32
    }

    fn project(&self, d: &[f32; DESCRIPTOR_DIM]) -> FeaturePair {
        let proj = |m: &[f32], dim: usize| -> Vec<f32> {
            (0..dim)
                .map(|r| {
                    m[r * DESCRIPTOR_DIM..(r + 1) * DESCRIPTOR_DIM]
                        .iter()
                        .zip(d)
                        .map(|(a, b)| a * b)
                        .sum()
                })
                .collect()
        };
        let mut key = proj(&self.key_proj, self.cfg.d_k);
        let ss: f32 = key.iter().map(|v| v * v).sum();
        if ss > 0.0 {
            let scale = (self.cfg.d_k as f32 / ss).sqrt();
            key.iter_mut().for_each(|v| *v *= scale);
        }
        let inv = 1.0 / (DESCRIPTOR_DIM as f32).sqrt();
        let value = proj(&self.value_proj, self.cfg.d_v)
            .into_iter()
            .map(|v| v * inv)
            .collect();
        (Vec32::from_raw(key), Vec32::from_raw(value))
    }

    /// `[RGB - frame mean RGB | gradient magnitude | pos_weight · position]`
    fn pixel_features(&self, planes: &Planes) -> PixelFeatures {
        let (h, w) = (planes.h, planes.w);
        let pw = self.cfg.pos_weight;
        let m = planes.mean_rgb;
        let r = Grid::from_fn(h, w, |y, x| {
            let i = y * w + x;
            let c = planes.rgb[i];
            Vec32::from_raw(vec![
                c[0] - m[0],
                c[1] - m[1],
                c[2] - m[2],
                planes.grad_mag[i],
                pw * ((y as f32 + 0.5) / h as f32 - 0.5),
                pw * ((x as f32 + 0.5) / w as f32 - 0.5),
            ])
        })
        .expect("non-empty frame");
        PixelFeatures { r }
    }

    pub fn extract_query(&self, frame: &RgbImage) -> Result<FrameFeatures> {
        let (gh, gw) = self.grid_shape(frame.height(), frame.width())?;
        let planes = Planes::new(frame);
        let mut keys = Vec::with_capacity(gh * gw);
        let mut values = Vec::with_capacity(gh * gw);
        for gy in 0..gh {
            for gx in 0..gw {
                let (k, v) = self.project(&self.descriptor(&planes, gy, gx));
                keys.push(k);
                values.push(v);
            }
        }
        Ok(FrameFeatures {
            query: QueryFeatures::new(Grid::from_vec(gh, gw, keys)?, Grid::from_vec(gh, gw, values)?)?,
            pixels: self.pixel_features(&planes),
        })
    }

    /// Features of the cells whose patch is covered by `mask` at least
    /// `coverage_min`.
    pub fn extract_reference(&self, frame: &RgbImage, mask: &Grid<f32>) -> Result<Vec<FeaturePair>> {
        mask.ensure_shape(frame.shape())?;
        let planes = Planes::new(frame);
        self.reference_from_planes(&planes, mask)
    }

    /// Reference features for every label `0..=num_objects` of `labels`.
    pub fn extract_references(
        &self,
        frame: &RgbImage,
        labels: &Grid<u8>,
        num_objects: usize,
    ) -> Result<Vec<Vec<FeaturePair>>> {
        labels.ensure_shape(frame.shape())?;
        let planes = Planes::new(frame);
        (0..=num_objects)
            .map(|k| {
                let mask = labels.map(|&l| (l as usize == k) as u8 as f32);
                self.reference_from_planes(&planes, &mask)
            })
            .collect()
    }

    fn reference_from_planes(&self, planes: &Planes, mask: &Grid<f32>) -> Result<Vec<FeaturePair>> {
        let (gh, gw) = self.grid_shape(planes.h, planes.w)?;
        let mut out = Vec::new();
        for gy in 0..gh {
            for gx in 0..gw {
                if self.coverage(mask, gy, gx) >= self.cfg.coverage_min {
                    out.push(self.project(&self.descriptor(planes, gy, gx)));
                }
            }
        }
        Ok(out)
    }
}
