//! Softmax attention retrieval of stored values for every query position.
//!
//! For a query key `k(p)` the weights are `softmax_j(k(p) · k_j)` over bank
//! entries, with raw (unscaled) dot products. The retrieved value is the
//! weighted sum of stored values. The matcher never mutates the bank: usage
//! counts come back in [`MatchResult`] for the caller to record.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::feature_bank::{FeatureBank, FeatureEntry};
use crate::numerics::{Grid, Vec32};

/// Key and value maps of a query frame on the feature lattice.
#[derive(Clone, Debug)]
pub struct QueryFeatures {
    pub keys: Grid<Vec32>,
    pub values: Grid<Vec32>,
}

impl QueryFeatures {
    pub fn new(keys: Grid<Vec32>, values: Grid<Vec32>) -> Result<Self> {
        values.ensure_shape(keys.shape())?;
        Ok(QueryFeatures { keys, values })
    }

    pub fn shape(&self) -> (usize, usize) {
        self.keys.shape()
    }
}

#[derive(Clone, Debug)]
pub struct MatchResult {
    /// Retrieved value per query position.
    pub retrieved: Grid<Vec32>,
    /// `[query value, retrieved value]` per position.
    pub concat: Grid<Vec32>,
    /// Number of positions whose weight on entry `j` exceeded `epsilon_l`.
    pub usage_counts: Vec<u32>,
}

/// Scores this far below the row maximum get weight exactly 0.
const UNDERFLOW_GAP: f32 = 40.0;

/// `exp(d)` for `d <= 0`, and exactly 0 below `-UNDERFLOW_GAP`. Branch-free
/// so loops over it vectorize; within 2 ulp of `f32::exp`.
#[inline(always)]
fn exp_neg(d: f32) -> f32 {
    const LOG2E: f32 = std::f32::consts::LOG2_E;
    const LN2_HI: f32 = 0.693_359_4;
    const LN2_LO: f32 = -2.121_944_4e-4;
    // Adding 1.5 * 2^23 rounds to an integer held in the low mantissa bits.
    const SHIFT: f32 = 12_582_912.0;
    let x = d.max(-UNDERFLOW_GAP - 1.0);
    let t = x * LOG2E + SHIFT;
    let n = t - SHIFT;
    let r = x - n * LN2_HI - n * LN2_LO;
    let mut p = 1.987_569_1e-4f32;
    p = p * r + 1.398_199_9e-3;
    p = p * r + 8.333_452e-3;
    p = p * r + 4.166_579_6e-2;
    p = p * r + 1.666_666_5e-1;
    p = p * r + 0.5;
    let e = p * r * r + r + 1.0;
    let scale = f32::from_bits((t.to_bits().wrapping_sub(SHIFT.to_bits()) as i32 + 127).wrapping_shl(23) as u32);
    if d >= -UNDERFLOW_GAP {
        e * scale
    } else {
        0.0
    }
}

const LANES: usize = 8;

/// Maximum with independent lane accumulators, so the loop vectorizes.
#[inline(always)]
fn lane_max(xs: &[f32]) -> f32 {
    let mut m = [f32::NEG_INFINITY; LANES];
    let chunks = xs.chunks_exact(LANES);
    let tail = chunks.remainder();
    for c in chunks {
        for (a, &x) in m.iter_mut().zip(c) {
            *a = a.max(x);
        }
    }
    tail.iter().chain(&m).copied().fold(f32::NEG_INFINITY, f32::max)
}

/// Sum in f64 over fixed lanes; the order depends only on `xs.len()`.
#[inline(always)]
fn lane_sum(xs: &[f32]) -> f64 {
    let mut s = [0f64; LANES];
    let chunks = xs.chunks_exact(LANES);
    let tail = chunks.remainder();
    for c in chunks {
        for (a, &x) in s.iter_mut().zip(c) {
            *a += x as f64;
        }
    }
    s.iter().sum::<f64>() + tail.iter().map(|&x| x as f64).sum::<f64>()
}

/// Entries per key block.
const EB: usize = 16;

/// Keys regrouped so each block of [`EB`] entries is contiguous and
/// dimension-major: `blocks[(b * kd + i) * EB + e]` is dimension `i` of entry
/// `b * EB + e`. The last block is zero-padded.
fn key_blocks(entries: &[FeatureEntry], kd: usize) -> Vec<f32> {
    let nb = entries.len().div_ceil(EB);
    let mut blocks = vec![0f32; nb * kd * EB];
    for (j, e) in entries.iter().enumerate() {
        let (b, off) = (j / EB, j % EB);
        for (i, &k) in e.key.iter().enumerate() {
            blocks[(b * kd + i) * EB + off] = k;
        }
    }
    blocks
}

/// `out[x * stride + j] = q_x · k_j` for every padded entry `j`. Each score
/// sums its products in dimension order.
#[inline(always)]
fn row_scores(queries: &[&[f32]], blocks: &[f32], kd: usize, out: &mut [f32]) {
    let stride = blocks.len() / kd;
    for (q, row) in queries.iter().zip(out.chunks_exact_mut(stride)) {
        for (block, dst) in blocks.chunks_exact(kd * EB).zip(row.chunks_exact_mut(EB)) {
            let mut acc = [0f32; EB];
            for (&qi, k) in q.iter().zip(block.chunks_exact(EB)) {
                for (a, &kv) in acc.iter_mut().zip(k) {
                    *a += qi * kv;
                }
            }
            dst.copy_from_slice(&acc);
        }
    }
}

struct Kernel<'a> {
    blocks: &'a [f32],
    values: &'a [f32],
    kd: usize,
    vd: usize,
    n: usize,
    epsilon_l: f32,
}

impl Kernel<'_> {
    /// Retrieved values and usage counts for one row of queries.
    fn row(&self, keys: &[&[f32]]) -> (Vec<Vec32>, Vec<u32>) {
        #[cfg(target_arch = "x86_64")]
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: the CPU supports AVX2.
            return unsafe { self.row_avx2(keys) };
        }
        self.row_generic(keys)
    }

    /// Same arithmetic in the same order as the generic path, wider vectors.
    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx2")]
    unsafe fn row_avx2(&self, keys: &[&[f32]]) -> (Vec<Vec32>, Vec<u32>) {
        self.row_generic(keys)
    }

    #[inline(always)]
    fn row_generic(&self, keys: &[&[f32]]) -> (Vec<Vec32>, Vec<u32>) {
        let Kernel {
            blocks,
            values,
            kd,
            vd,
            n,
            epsilon_l,
        } = *self;
        let stride = blocks.len() / kd;
        let mut counts = vec![0u32; n];
        let mut scores = vec![0f32; keys.len() * stride];
        row_scores(keys, blocks, kd, &mut scores);
        let mut weights = vec![0f32; n];
        let mut out = Vec::with_capacity(keys.len());
        for x in 0..keys.len() {
            let scores = &scores[x * stride..x * stride + n];
            let max = lane_max(scores);
            for (e, &s) in weights.iter_mut().zip(scores) {
                *e = exp_neg(s - max);
            }
            let total = lane_sum(&weights);
            let inv = (1.0 / total) as f32;
            let mut acc = vec![0f32; vd];
            for (j, (e, c)) in weights.iter().zip(counts.iter_mut()).enumerate() {
                let wt = e * inv;
                *c += u32::from(wt > epsilon_l);
                if wt == 0.0 {
                    continue;
                }
                for (a, &v) in acc.iter_mut().zip(&values[j * vd..(j + 1) * vd]) {
                    *a += wt * v;
                }
            }
            out.push(Vec32::from_raw(acc));
        }
        (out, counts)
    }
}

/// Retrieves from one object's bank. Callers loop over the per-object banks.
pub fn match_features(query: &QueryFeatures, bank: &FeatureBank, epsilon_l: f32) -> Result<MatchResult> {
    let entries = bank.entries();
    if entries.is_empty() {
        return Err(Error::EmptyBank);
    }
    let kd = entries[0].key.dim();
    let vd = entries[0].value.dim();
    if let Some(k) = query.keys.cells().first() {
        if k.dim() != kd {
            return Err(Error::DimMismatch {
                expected: kd,
                got: k.dim(),
            });
        }
    }
    if let Some(v) = query.values.cells().first() {
        if v.dim() != vd {
            return Err(Error::DimMismatch {
                expected: vd,
                got: v.dim(),
            });
        }
    }
    query.values.ensure_shape(query.keys.shape())?;

    let n = entries.len();
    let blocks = key_blocks(entries, kd);
    let values: Vec<f32> = entries.iter().flat_map(|e| e.value.iter().copied()).collect();

    let kernel = Kernel {
        blocks: &blocks,
        values: &values,
        kd,
        vd,
        n,
        epsilon_l,
    };
    let (h, w) = query.shape();
    let rows: Vec<(Vec<Vec32>, Vec<u32>)> = (0..h)
        .into_par_iter()
        .map(|y| {
            let row_keys: Vec<&[f32]> = (0..w).map(|x| query.keys.get(y, x).as_slice()).collect();
            kernel.row(&row_keys)
        })
        .collect();

    let mut usage_counts = vec![0u32; n];
    let mut retrieved = Vec::with_capacity(h * w);
    for (row, counts) in rows {
        for (u, c) in usage_counts.iter_mut().zip(counts) {
            *u += c;
        }
        retrieved.extend(row);
    }
    let retrieved = Grid::from_vec(h, w, retrieved)?;
    let concat = Grid::from_fn(h, w, |y, x| {
        let mut c = Vec::with_capacity(2 * vd);
        c.extend_from_slice(query.values.get(y, x));
        c.extend_from_slice(retrieved.get(y, x));
        Vec32::from_raw(c)
    })?;
    Ok(MatchResult {
        retrieved,
        concat,
        usage_counts,
    })
}
