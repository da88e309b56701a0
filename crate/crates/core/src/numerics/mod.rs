//! Dense-array and vector math shared by every other module.

mod grid;
mod rng;
mod vector;

pub use grid::Grid;
pub use rng::{lattice_hash, Rng};
pub(crate) use vector::cosine_or_zero;
pub use vector::{cosine, dot, norm, softmax, Vec32};

use crate::error::{Error, Result};

/// Values that can be blended with bilinear weights.
pub trait Interpolate: Clone {
    fn blend(corners: [&Self; 4], weights: [f64; 4]) -> Self;
}

impl Interpolate for f32 {
    fn blend(c: [&Self; 4], w: [f64; 4]) -> Self {
        (0..4).map(|i| *c[i] as f64 * w[i]).sum::<f64>() as f32
    }
}

impl Interpolate for f64 {
    fn blend(c: [&Self; 4], w: [f64; 4]) -> Self {
        (0..4).map(|i| c[i] * w[i]).sum()
    }
}

impl Interpolate for Vec32 {
    fn blend(c: [&Self; 4], w: [f64; 4]) -> Self {
        let dim = c[0].dim();
        let data = (0..dim)
            .map(|k| (0..4).map(|i| c[i][k] as f64 * w[i]).sum::<f64>() as f32)
            .collect();
        Vec32::from_raw(data)
    }
}

/// Bilinear sample at fractional grid coordinate `(fy, fx)`, clamped to the grid.
pub fn bilinear_sample<T: Interpolate>(src: &Grid<T>, fy: f64, fx: f64) -> T {
    let fy = fy.clamp(0.0, (src.height() - 1) as f64);
    let fx = fx.clamp(0.0, (src.width() - 1) as f64);
    let y0 = fy.floor() as usize;
    let x0 = fx.floor() as usize;
    let y1 = (y0 + 1).min(src.height() - 1);
    let x1 = (x0 + 1).min(src.width() - 1);
    let ty = fy - y0 as f64;
    let tx = fx - x0 as f64;
    T::blend(
        [src.get(y0, x0), src.get(y0, x1), src.get(y1, x0), src.get(y1, x1)],
        [(1.0 - ty) * (1.0 - tx), (1.0 - ty) * tx, ty * (1.0 - tx), ty * tx],
    )
}

/// Corner-aligned bilinear upsampling: output corners coincide with input
/// corners.
pub fn bilinear_upsample<T: Interpolate>(src: &Grid<T>, out_h: usize, out_w: usize) -> Result<Grid<T>> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidGrid(format!("zero output dimension {out_h}x{out_w}")));
    }
    if out_h < src.height() || out_w < src.width() {
        return Err(Error::InvalidGrid(format!(
            "upsample target {out_h}x{out_w} smaller than source {}x{}",
            src.height(),
            src.width()
        )));
    }
    let scale = |n_in: usize, n_out: usize| {
        if n_out > 1 {
            (n_in - 1) as f64 / (n_out - 1) as f64
        } else {
            0.0
        }
    };
    let sy = scale(src.height(), out_h);
    let sx = scale(src.width(), out_w);
    Grid::from_fn(out_h, out_w, |y, x| bilinear_sample(src, y as f64 * sy, x as f64 * sx))
}
