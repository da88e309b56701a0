//! Deterministic synthetic multi-object videos with exact ground truth.
//!
//! Textured shapes move over a textured static background. Object hue
//! rotates by `drift` turns per frame and the texture scrolls with it, so
//! appearance changes steadily over long sequences. Every frame is a pure
//! function of `(spec, t)`, which lets long videos be rendered and written
//! one frame at a time.

mod dataset;
mod pnm;
mod streams;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{lattice_hash, Grid, Rng};

pub use dataset::{frame_path, load_dataset, mask_path, save_dataset, Dataset, DatasetMeta, DatasetWriter};
pub use pnm::{decode_pgm, decode_ppm, encode_pgm, encode_ppm, read_pgm, read_ppm, write_pgm, write_ppm, RgbImage};
pub use streams::{FeatureStream, StreamKind, StreamSpec};

pub const MAX_OBJECTS: usize = 5;
pub const MAX_DRIFT: f32 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Motion {
    Static,
    LinearBounce,
    Sinusoidal,
}

impl std::str::FromStr for Motion {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "static" => Ok(Motion::Static),
            "linear" | "linear_bounce" | "bounce" => Ok(Motion::LinearBounce),
            "sinusoidal" | "sine" => Ok(Motion::Sinusoidal),
            other => Err(format!("unknown motion '{other}' (static|linear|sinusoidal)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Disk,
    Rectangle,
    Triangle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub num_objects: usize,
    pub frames: usize,
    pub seed: u64,
    pub motion: Motion,
    /// Hue turns per frame, in `[0, 0.05]`.
    pub drift: f32,
    /// Let objects roam the whole frame and cross each other.
    pub occlusion: bool,
    /// Cycled over objects.
    pub shapes: Vec<ShapeKind>,
    /// Object circumradius as a fraction of the smaller frame side.
    pub object_scale: f32,
    /// Pixels per frame.
    pub speed: f32,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            width: 128,
            height: 128,
            num_objects: 2,
            frames: 50,
            seed: 0,
            motion: Motion::LinearBounce,
            drift: 0.0,
            occlusion: false,
            shapes: vec![ShapeKind::Disk, ShapeKind::Rectangle, ShapeKind::Triangle],
            object_scale: 0.13,
            speed: 1.0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Scene(m));
        if self.width < 8 || self.height < 8 {
            return bad(format!("frame {}x{} too small", self.width, self.height));
        }
        if !(1..=MAX_OBJECTS).contains(&self.num_objects) {
            return bad(format!("num_objects must be 1-{MAX_OBJECTS}, got {}", self.num_objects));
        }
        if self.frames < 2 {
            return bad(format!("need at least 2 frames, got {}", self.frames));
        }
        if !(0.0..=MAX_DRIFT).contains(&self.drift) {
            return bad(format!("drift must be in [0, {MAX_DRIFT}], got {}", self.drift));
        }
        if self.shapes.is_empty() {
            return bad("shape set is empty".into());
        }
        if !(self.object_scale > 0.0 && self.object_scale < 0.5) {
            return bad(format!("object_scale must be in (0, 0.5), got {}", self.object_scale));
        }
        if !(self.speed >= 0.0 && self.speed.is_finite()) {
            return bad(format!("invalid speed {}", self.speed));
        }
        Ok(())
    }
}

/// Frames with per-frame label grids (0 = background).
#[derive(Clone, Debug, PartialEq)]
pub struct VideoSequence {
    pub frames: Vec<RgbImage>,
    pub gt: Vec<Grid<u8>>,
    /// Frames carrying evaluation labels.
    pub annotated: Vec<usize>,
    pub num_objects: usize,
    pub scene: Option<SceneSpec>,
}

impl VideoSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::Video("no frames".into()));
        }
        if self.frames.len() != self.gt.len() {
            return Err(Error::Video(format!(
                "{} frames but {} label masks",
                self.frames.len(),
                self.gt.len()
            )));
        }
        let shape = self.frames[0].shape();
        for (t, (f, g)) in self.frames.iter().zip(&self.gt).enumerate() {
            if f.shape() != shape || g.shape() != shape {
                return Err(Error::Video(format!("frame {t} shape differs from frame 0")));
            }
            if let Some(&l) = g.cells().iter().find(|&&l| l as usize > self.num_objects) {
                return Err(Error::Video(format!("frame {t} has label {l} > {}", self.num_objects)));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct SceneObject {
    shape: ShapeKind,
    radius: f32,
    start: (f32, f32),
    velocity: (f32, f32),
    /// Allowed center range, x then y.
    bounds: ((f32, f32), (f32, f32)),
    hue: f32,
    saturation: f32,
    value: f32,
    texture_seed: u64,
}

/// Renders frames of one scene on demand.
#[derive(Clone, Debug)]
pub struct SceneGenerator {
    spec: SceneSpec,
    objects: Vec<SceneObject>,
    background_seed: u64,
    background_hue: f32,
}

fn fold(x: f32, lo: f32, hi: f32) -> f32 {
    let span = hi - lo;
    if span <= 0.0 {
        return lo;
    }
    let period = 2.0 * span;
    let m = (x - lo).rem_euclid(period);
    if m <= span {
        lo + m
    } else {
        lo + period - m
    }
}

impl SceneGenerator {
    pub fn new(spec: SceneSpec) -> Result<Self> {
        spec.validate()?;
        let rng = Rng::new(spec.seed);
        let mut layout = rng.split(0);
        let mut looks = rng.split(1);
        let (w, h) = (spec.width as f32, spec.height as f32);
        let l = spec.num_objects;
        let base_r = spec.object_scale * w.min(h);
        let mut objects = Vec::with_capacity(l);
        let hue_offset = looks.uniform();
        let background_hue = looks.uniform();

        for i in 0..l {
            let radius = (base_r * layout.range(0.9, 1.1)).max(3.0);
            let (bounds, start, velocity) = if spec.occlusion {
                let bx = (radius + 1.0, w - radius - 1.0);
                let by = (radius + 1.0, h - radius - 1.0);
                if bx.0 > bx.1 || by.0 > by.1 {
                    return Err(Error::Scene(format!("object {} does not fit in the frame", i + 1)));
                }
                let (cx, cy) = (w / 2.0, h / 2.0);
                let ring = (w.min(h) / 2.0 - radius - 2.0).max(0.0);
                if l > 1 {
                    let chord = 2.0 * ring * (std::f32::consts::PI / l as f32).sin();
                    if chord < 2.0 * radius + 1.0 {
                        return Err(Error::Scene(format!(
                            "{l} objects of radius {radius:.1} cannot be placed disjointly"
                        )));
                    }
                }
                let angle = std::f32::consts::TAU * i as f32 / l as f32 + 0.35;
                let start = (cx + ring * angle.cos(), cy + ring * angle.sin());
                // Head for the center so paths cross.
                let velocity = (-angle.cos() * spec.speed, -angle.sin() * spec.speed);
                ((bx, by), start, velocity)
            } else {
                // Each object roams its own cell of a near-square grid.
                let cols = (l as f32).sqrt().ceil() as usize;
                let rows = l.div_ceil(cols);
                let (cw, ch) = (w / cols as f32, h / rows as f32);
                let (lo, top) = (cw * (i % cols) as f32, ch * (i / cols) as f32);
                if 2.0 * radius + 2.0 > cw || 2.0 * radius + 2.0 > ch {
                    return Err(Error::Scene(format!(
                        "{l} objects of radius {radius:.1} cannot be placed disjointly in a {}x{} frame",
                        spec.width, spec.height
                    )));
                }
                let bx = (lo + radius + 1.0, lo + cw - radius - 1.0);
                let by = (top + radius + 1.0, top + ch - radius - 1.0);
                let start = (
                    bx.0 + (bx.1 - bx.0) * layout.range(0.25, 0.75),
                    by.0 + (by.1 - by.0) * layout.range(0.25, 0.75),
                );
                let angle = layout.range(0.0, std::f32::consts::TAU);
                let velocity = (angle.cos() * spec.speed, angle.sin() * spec.speed);
                ((bx, by), start, velocity)
            };
            objects.push(SceneObject {
                shape: spec.shapes[i % spec.shapes.len()],
                radius,
                start,
                velocity,
                bounds,
                hue: (hue_offset + i as f32 / l as f32 + looks.range(-0.05, 0.05)).rem_euclid(1.0),
                saturation: looks.range(0.7, 0.9),
                value: looks.range(0.75, 0.95),
                texture_seed: looks.next_u64(),
            });
        }
        Ok(SceneGenerator {
            background_seed: looks.next_u64(),
            background_hue,
            spec,
            objects,
        })
    }

    pub fn spec(&self) -> &SceneSpec {
        &self.spec
    }

    /// Object center at frame `t`.
    fn center(&self, o: &SceneObject, t: usize) -> (f32, f32) {
        let t = t as f32;
        let ((x0, x1), (y0, y1)) = o.bounds;
        match self.spec.motion {
            Motion::Static => o.start,
            Motion::LinearBounce => (
                fold(o.start.0 + o.velocity.0 * t, x0, x1),
                fold(o.start.1 + o.velocity.1 * t, y0, y1),
            ),
            Motion::Sinusoidal => {
                if self.spec.occlusion {
                    // Oscillate through the frame center along the start ray.
                    let (cx, cy) = ((x0 + x1) / 2.0, (y0 + y1) / 2.0);
                    let (dx, dy) = (o.start.0 - cx, o.start.1 - cy);
                    let amp = (dx * dx + dy * dy).sqrt().max(1e-3);
                    let c = (self.spec.speed * t / amp).cos();
                    (cx + dx * c, cy + dy * c)
                } else {
                    let (cx, cy) = ((x0 + x1) / 2.0, (y0 + y1) / 2.0);
                    let (ax, ay) = ((x1 - x0) / 2.0, (y1 - y0) / 2.0);
                    let wx = self.spec.speed / ax.max(1.0);
                    let wy = self.spec.speed / ay.max(1.0);
                    let sx = ((o.start.0 - cx) / ax.max(1e-3)).clamp(-1.0, 1.0).asin();
                    let sy = ((o.start.1 - cy) / ay.max(1e-3)).clamp(-1.0, 1.0).asin();
                    (cx + ax * (wx * t + sx).sin(), cy + ay * (wy * t + sy).sin())
                }
            }
        }
    }

    /// Axis-aligned bounding boxes `(x0, y0, x1, y1)` of every object at `t`.
    pub fn bounding_boxes(&self, t: usize) -> Vec<(f32, f32, f32, f32)> {
        self.objects
            .iter()
            .map(|o| {
                let (cx, cy) = self.center(o, t);
                (cx - o.radius, cy - o.radius, cx + o.radius, cy + o.radius)
            })
            .collect()
    }

    pub fn render(&self, t: usize) -> (RgbImage, Grid<u8>) {
        let (w, h) = (self.spec.width, self.spec.height);
        let centers: Vec<(f32, f32)> = self.objects.iter().map(|o| self.center(o, t)).collect();
        let drift = self.spec.drift * t as f32;
        let mut img = Vec::with_capacity(w * h);
        let mut labels = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let (px, py) = (x as f32 + 0.5, y as f32 + 0.5);
                let mut hit = None;
                for (i, (o, &(cx, cy))) in self.objects.iter().zip(&centers).enumerate().rev() {
                    if contains(o.shape, o.radius, px - cx, py - cy) {
                        hit = Some((i, cx, cy));
                        break;
                    }
                }
                match hit {
                    Some((i, cx, cy)) => {
                        let o = &self.objects[i];
                        let n = value_noise(o.texture_seed, px - cx + 16.0 * drift, py - cy, 6.0);
                        let hue = (o.hue + drift).rem_euclid(1.0);
                        img.push(hsv_to_rgb(hue, o.saturation, o.value * (0.7 + 0.3 * n)));
                        labels.push(i as u8 + 1);
                    }
                    None => {
                        let n = 0.6 * value_noise(self.background_seed, px, py, 12.0)
                            + 0.4 * value_noise(self.background_seed ^ 0x5bd1, px, py, 5.0);
                        img.push(hsv_to_rgb(self.background_hue, 0.15, 0.3 + 0.4 * n));
                        labels.push(0);
                    }
                }
            }
        }
        (
            Grid::from_vec(h, w, img).expect("validated dimensions"),
            Grid::from_vec(h, w, labels).expect("validated dimensions"),
        )
    }
}

fn contains(shape: ShapeKind, r: f32, dx: f32, dy: f32) -> bool {
    match shape {
        ShapeKind::Disk => dx * dx + dy * dy <= r * r,
        ShapeKind::Rectangle => dx.abs() <= 0.8 * r && dy.abs() <= 0.6 * r,
        ShapeKind::Triangle => {
            // Upward equilateral triangle with circumradius r.
            let s3 = 3f32.sqrt();
            let verts = [(0.0, -r), (-s3 / 2.0 * r, r / 2.0), (s3 / 2.0 * r, r / 2.0)];
            let mut sign = 0.0f32;
            for k in 0..3 {
                let (ax, ay) = verts[k];
                let (bx, by) = verts[(k + 1) % 3];
                let cross = (bx - ax) * (dy - ay) - (by - ay) * (dx - ax);
                if cross != 0.0 {
                    if sign != 0.0 && cross.signum() != sign {
                        return false;
                    }
                    sign = cross.signum();
                }
            }
            true
        }
    }
}

/// Smooth value noise in `[0, 1)` with lattice spacing `cell`.
fn value_noise(seed: u64, x: f32, y: f32, cell: f32) -> f32 {
    let gx = x / cell;
    let gy = y / cell;
    let ix = gx.floor();
    let iy = gy.floor();
    let smooth = |t: f32| t * t * (3.0 - 2.0 * t);
    let tx = smooth(gx - ix);
    let ty = smooth(gy - iy);
    let corner =
        |dx: i64, dy: i64| (lattice_hash(seed, ix as i64 + dx, iy as i64 + dy) >> 40) as f32 / (1u64 << 24) as f32;
    let top = corner(0, 0) * (1.0 - tx) + corner(1, 0) * tx;
    let bottom = corner(0, 1) * (1.0 - tx) + corner(1, 1) * tx;
    top * (1.0 - ty) + bottom * ty
}

fn hsv_to_rgb(h: f32, s: f32, v: f32) -> [u8; 3] {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let c = v * s;
    let xc = c * (1.0 - (h6 % 2.0 - 1.0).abs());
    let (r, g, b) = match h6 as u32 {
        0 => (c, xc, 0.0),
        1 => (xc, c, 0.0),
        2 => (0.0, c, xc),
        3 => (0.0, xc, c),
        4 => (xc, 0.0, c),
        _ => (c, 0.0, xc),
    };
    let m = v - c;
    let q = |u: f32| ((u + m).clamp(0.0, 1.0) * 255.0).round() as u8;
    [q(r), q(g), q(b)]
}

/// Renders the whole sequence. All frames are annotated.
pub fn generate(spec: &SceneSpec) -> Result<VideoSequence> {
    let gen = SceneGenerator::new(spec.clone())?;
    let (frames, gt) = (0..spec.frames).map(|t| gen.render(t)).unzip();
    Ok(VideoSequence {
        frames,
        gt,
        annotated: (0..spec.frames).collect(),
        num_objects: spec.num_objects,
        scene: Some(spec.clone()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn static_undrifting_video_is_constant() {
        let spec = SceneSpec {
            motion: Motion::Static,
            frames: 6,
            num_objects: 3,
            ..Default::default()
        };
        let v = generate(&spec).unwrap();
        assert!(v.frames.iter().all(|f| f == &v.frames[0]));
        assert!(v.gt.iter().all(|g| g == &v.gt[0]));
    }

    #[test]
    fn same_spec_same_video() {
        let spec = SceneSpec {
            frames: 5,
            drift: 0.02,
            motion: Motion::Sinusoidal,
            seed: 17,
            ..Default::default()
        };
        assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
        let other = SceneSpec {
            seed: 18,
            ..spec.clone()
        };
        assert_ne!(generate(&spec).unwrap().frames, generate(&other).unwrap().frames);
    }

    #[test]
    fn crossing_paths_overlap() {
        for motion in [Motion::LinearBounce, Motion::Sinusoidal] {
            let spec = SceneSpec {
                num_objects: 2,
                occlusion: true,
                frames: 120,
                speed: 1.5,
                motion,
                ..Default::default()
            };
            let gen = SceneGenerator::new(spec.clone()).unwrap();
            let overlapping = (0..spec.frames).any(|t| {
                let b = gen.bounding_boxes(t);
                b[0].0 < b[1].2 && b[1].0 < b[0].2 && b[0].1 < b[1].3 && b[1].1 < b[0].3
            });
            assert!(overlapping, "{motion:?}");
        }
    }

    #[test]
    fn cells_keep_objects_disjoint() {
        let spec = SceneSpec {
            num_objects: 5,
            frames: 200,
            speed: 2.0,
            ..Default::default()
        };
        let gen = SceneGenerator::new(spec.clone()).unwrap();
        for t in (0..spec.frames).step_by(7) {
            let b = gen.bounding_boxes(t);
            for i in 0..b.len() {
                for j in i + 1..b.len() {
                    let apart_x = b[i].2 <= b[j].0 || b[j].2 <= b[i].0;
                    let apart_y = b[i].3 <= b[j].1 || b[j].3 <= b[i].1;
                    assert!(apart_x || apart_y, "t={t}");
                }
            }
            let (_, labels) = gen.render(t);
            for k in 1..=3u8 {
                assert!(labels.cells().contains(&k), "object {k} missing at t={t}");
            }
        }
    }

    #[test]
    fn rejects_oversized_or_invalid_scenes() {
        let too_big = SceneSpec {
            num_objects: 5,
            object_scale: 0.3,
            ..Default::default()
        };
        assert!(matches!(generate(&too_big), Err(Error::Scene(_))));
        let crowded = SceneSpec {
            num_objects: 5,
            object_scale: 0.3,
            occlusion: true,
            ..Default::default()
        };
        assert!(matches!(generate(&crowded), Err(Error::Scene(_))));
        assert!(generate(&SceneSpec {
            num_objects: 0,
            ..Default::default()
        })
        .is_err());
        assert!(generate(&SceneSpec {
            frames: 1,
            ..Default::default()
        })
        .is_err());
        assert!(generate(&SceneSpec {
            drift: 0.06,
            ..Default::default()
        })
        .is_err());
    }

    #[test]
    fn labels_stay_in_range() {
        let spec = SceneSpec {
            num_objects: 4,
            occlusion: true,
            object_scale: 0.12,
            frames: 30,
            ..Default::default()
        };
        let v = generate(&spec).unwrap();
        v.validate().unwrap();
    }

    #[test]
    fn triangle_membership() {
        assert!(contains(ShapeKind::Triangle, 10.0, 0.0, 0.0));
        assert!(!contains(ShapeKind::Triangle, 10.0, 0.0, 9.0));
        assert!(contains(ShapeKind::Triangle, 10.0, 0.0, -9.0));
    }
}
