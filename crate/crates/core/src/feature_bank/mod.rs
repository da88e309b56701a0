//! Adaptive feature bank: a bounded per-object store of key/value features.
//!
//! New features are absorbed in two ways. A feature whose key is close
//! enough (cosine above `epsilon_h`) to a stored key is folded into that
//! entry with an exponential moving average; anything else is appended.
//! When appending would overflow the budget, entries with the smallest
//! least-frequently-used index are evicted first. The LFU index of an entry
//! is its accumulated usage `cnt` divided by the number of frames it has
//! been resident.
//!
//! ```text
//!   absorb(frame t, features)
//!     ├─ match every feature against the bank as it was on entry (parallel)
//!     ├─ cos > ε_h  → k ← λ·k + (1-λ)·k_new, v ← λ·v + (1-λ)·v_new (input order)
//!     └─ otherwise  → stage
//!            ├─ evict lowest cnt / (t - birth + 1) until staged fit
//!            └─ append staged with cnt = 0, birth = t
//! ```

mod snapshot;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numerics::{dot, norm, Vec32};

pub use snapshot::{read_snapshot, write_snapshot, SNAPSHOT_MAGIC, SNAPSHOT_VERSION};

/// Default merge threshold on key cosine similarity.
pub const DEFAULT_EPSILON_H: f32 = 0.95;
/// Default weight kept by the stored entry in a merge.
pub const DEFAULT_LAMBDA_P: f32 = 0.9;
/// Default attention weight above which a query position counts as a use.
pub const DEFAULT_EPSILON_L: f32 = 1e-4;
pub const DEFAULT_BUDGET: usize = 1024;

/// Policy parameters shared by every bank of a run.
#[derive(Clone, Debug, PartialEq)]
pub struct BankConfig {
    /// Merge when the best cosine similarity exceeds this. Values above 1
    /// disable merging entirely.
    pub epsilon_h: f32,
    pub lambda_p: f32,
    pub epsilon_l: f32,
    pub budget: usize,
    pub key_dim: usize,
    pub value_dim: usize,
    /// Rescale merged keys back to unit RMS.
    pub normalize_keys: bool,
}

impl BankConfig {
    pub fn new(key_dim: usize, value_dim: usize) -> Self {
        BankConfig {
            epsilon_h: DEFAULT_EPSILON_H,
            lambda_p: DEFAULT_LAMBDA_P,
            epsilon_l: DEFAULT_EPSILON_L,
            budget: DEFAULT_BUDGET,
            key_dim,
            value_dim,
            normalize_keys: false,
        }
    }

    pub fn with_budget(mut self, budget: usize) -> Self {
        self.budget = budget;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.epsilon_h > 0.0) || !self.epsilon_h.is_finite() {
            return bad(format!("epsilon_h must be positive, got {}", self.epsilon_h));
        }
        if !(0.0..1.0).contains(&self.lambda_p) {
            return bad(format!("lambda_p must be in [0, 1), got {}", self.lambda_p));
        }
        if !(self.epsilon_l > 0.0 && self.epsilon_l < 1.0) {
            return bad(format!("epsilon_l must be in (0, 1), got {}", self.epsilon_l));
        }
        if self.budget == 0 {
            return bad("budget must be at least 1".into());
        }
        if self.key_dim == 0 || self.value_dim == 0 {
            return bad("key_dim and value_dim must be positive".into());
        }
        Ok(())
    }
}

/// One bank slot.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureEntry {
    pub id: u64,
    pub key: Vec32,
    pub value: Vec32,
    /// Accumulated `ln(count + 1)` usage.
    pub cnt: f64,
    pub birth: u64,
}

impl FeatureEntry {
    pub fn lfu_index(&self, current_frame: u64) -> f64 {
        lfu_index(self, current_frame)
    }
}

/// `cnt / l` with `l = current_frame - birth + 1` frames of residency.
pub fn lfu_index(entry: &FeatureEntry, current_frame: u64) -> f64 {
    debug_assert!(current_frame >= entry.birth);
    let span = current_frame.saturating_sub(entry.birth) + 1;
    entry.cnt / span as f64
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BankStats {
    pub merges: u64,
    pub appends: u64,
    pub evictions: u64,
    /// Staged appends discarded because a single batch outnumbered the budget.
    pub dropped: u64,
}

/// What happened to one input feature of an [`FeatureBank::absorb`] call.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Assignment {
    Merged { entry: u64 },
    Appended { entry: u64 },
    Dropped,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AbsorbReport {
    pub merged: usize,
    pub appended: usize,
    pub dropped: usize,
    pub evicted: Vec<u64>,
    /// One per input feature, in input order.
    pub assignments: Vec<Assignment>,
}

pub type FeaturePair = (Vec32, Vec32);

#[derive(Clone, Debug)]
pub struct FeatureBank {
    entries: Vec<FeatureEntry>,
    config: BankConfig,
    current_frame: u64,
    next_id: u64,
    stats: BankStats,
}

impl FeatureBank {
    /// Builds a bank from the first annotated frame.
    pub fn init(config: BankConfig, first_features: Vec<FeaturePair>, frame: u64) -> Result<Self> {
        config.validate()?;
        if first_features.is_empty() {
            return Err(Error::Empty("first-frame features"));
        }
        for (k, v) in &first_features {
            check_dims(&config, k, v)?;
        }
        if first_features.len() > config.budget {
            return Err(Error::FirstFrameExceedsBudget {
                count: first_features.len(),
                budget: config.budget,
            });
        }
        let entries = first_features
            .into_iter()
            .enumerate()
            .map(|(i, (key, value))| FeatureEntry {
                id: i as u64,
                key,
                value,
                cnt: 0.0,
                birth: frame,
            })
            .collect::<Vec<_>>();
        let next_id = entries.len() as u64;
        Ok(FeatureBank {
            entries,
            config,
            current_frame: frame,
            next_id,
            stats: BankStats::default(),
        })
    }

    /// Reassembles a bank from stored entries (snapshot loading).
    pub(crate) fn from_entries(config: BankConfig, entries: Vec<FeatureEntry>) -> Result<Self> {
        config.validate()?;
        if entries.len() > config.budget {
            return Err(Error::Snapshot(format!(
                "{} entries exceed budget {}",
                entries.len(),
                config.budget
            )));
        }
        if entries.windows(2).any(|w| w[0].id >= w[1].id) {
            return Err(Error::Snapshot("entry ids are not strictly increasing".into()));
        }
        let current_frame = entries.iter().map(|e| e.birth).max().unwrap_or(0);
        let next_id = entries.last().map(|e| e.id + 1).unwrap_or(0);
        Ok(FeatureBank {
            entries,
            config,
            current_frame,
            next_id,
            stats: BankStats::default(),
        })
    }

    pub fn config(&self) -> &BankConfig {
        &self.config
    }

    pub fn entries(&self) -> &[FeatureEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn current_frame(&self) -> u64 {
        self.current_frame
    }

    pub fn stats(&self) -> BankStats {
        self.stats
    }

    /// Merges or appends each new feature, evicting as needed to stay within
    /// budget. Fails without modifying the bank on dimension or frame-order
    /// errors.
    pub fn absorb(&mut self, new_features: Vec<FeaturePair>, frame: u64) -> Result<AbsorbReport> {
        if frame <= self.current_frame {
            return Err(Error::FrameOrder {
                frame,
                current: self.current_frame,
            });
        }
        for (k, v) in &new_features {
            check_dims(&self.config, k, v)?;
        }
        self.current_frame = frame;

        let targets = self.best_matches(&new_features);
        let mut report = AbsorbReport {
            assignments: Vec::with_capacity(new_features.len()),
            ..Default::default()
        };
        let lambda = self.config.lambda_p;
        let mut staged = Vec::new();
        for (i, ((key, value), target)) in new_features.into_iter().zip(targets).enumerate() {
            match target {
                Some(j) => {
                    let entry = &mut self.entries[j];
                    ema(entry.key.as_mut_slice(), &key, lambda);
                    ema(entry.value.as_mut_slice(), &value, lambda);
                    if self.config.normalize_keys {
                        unit_rms(entry.key.as_mut_slice());
                    }
                    report.merged += 1;
                    report.assignments.push(Assignment::Merged { entry: entry.id });
                }
                None => {
                    report.assignments.push(Assignment::Dropped);
                    staged.push((i, key, value));
                }
            }
        }

        let budget = self.config.budget;
        if staged.len() > budget {
            // Keep an evenly spaced subset of the batch.
            let n = staged.len();
            let keep: Vec<usize> = (0..budget).map(|s| s * n / budget).collect();
            let mut kept = Vec::with_capacity(budget);
            let mut next = keep.iter().peekable();
            for (pos, item) in staged.into_iter().enumerate() {
                if next.peek() == Some(&&pos) {
                    next.next();
                    kept.push(item);
                }
            }
            report.dropped = n - budget;
            staged = kept;
        }
        if !staged.is_empty() {
            report.evicted = self.evict(staged.len())?;
        }
        for (i, key, value) in staged {
            let id = self.next_id;
            self.next_id += 1;
            self.entries.push(FeatureEntry {
                id,
                key,
                value,
                cnt: 0.0,
                birth: frame,
            });
            report.assignments[i] = Assignment::Appended { entry: id };
            report.appended += 1;
        }

        self.stats.merges += report.merged as u64;
        self.stats.appends += report.appended as u64;
        self.stats.dropped += report.dropped as u64;
        debug_assert!(self.entries.len() <= budget);
        Ok(report)
    }

    /// For each feature, the index of the most similar entry in the current
    /// snapshot if its cosine exceeds `epsilon_h`. Ties go to the smaller id.
    fn best_matches(&self, features: &[FeaturePair]) -> Vec<Option<usize>> {
        let eps = self.config.epsilon_h as f64;
        if eps > 1.0 || self.entries.is_empty() {
            return vec![None; features.len()];
        }
        // Unit-norm copies in one contiguous block; zero-norm keys never match.
        let kd = self.config.key_dim;
        let mut unit = Vec::with_capacity(self.entries.len() * kd);
        let mut live = Vec::with_capacity(self.entries.len());
        for e in &self.entries {
            let n = e.key.norm();
            live.push(n > 0.0);
            let inv = if n > 0.0 { (1.0 / n) as f32 } else { 0.0 };
            unit.extend(e.key.iter().map(|&v| v * inv));
        }
        features
            .par_iter()
            .map(|(key, _)| {
                let qn = key.norm();
                if qn == 0.0 {
                    return None;
                }
                let q: Vec<f32> = key.iter().map(|&v| (v as f64 / qn) as f32).collect();
                let mut best: Option<(usize, f32)> = None;
                for (j, row) in unit.chunks_exact(kd).enumerate() {
                    if !live[j] {
                        continue;
                    }
                    let sim = dot(&q, row);
                    if best.is_none_or(|(_, s)| sim > s) {
                        best = Some((j, sim));
                    }
                }
                best.filter(|&(_, s)| s as f64 > eps).map(|(j, _)| j)
            })
            .collect()
    }

    /// Adds `ln(count + 1)` to each entry's usage accumulator.
    pub fn record_usage(&mut self, match_counts: &[u32]) -> Result<()> {
        if match_counts.len() != self.entries.len() {
            return Err(Error::LengthMismatch {
                expected: self.entries.len(),
                got: match_counts.len(),
            });
        }
        for (entry, &count) in self.entries.iter_mut().zip(match_counts) {
            if count > 0 {
                entry.cnt += (count as f64 + 1.0).ln();
            }
        }
        Ok(())
    }

    /// Removes the lowest-LFU entries until `needed_slots` more fit in the
    /// budget. Ties: older birth, then smaller id. Returns evicted ids.
    pub fn evict(&mut self, needed_slots: usize) -> Result<Vec<u64>> {
        let budget = self.config.budget;
        if needed_slots > budget {
            return Err(Error::NeededExceedsBudget {
                needed: needed_slots,
                budget,
            });
        }
        let size = self.entries.len();
        if size + needed_slots <= budget {
            return Ok(Vec::new());
        }
        let excess = size + needed_slots - budget;
        let now = self.current_frame;
        let mut order: Vec<(f64, u64, u64, usize)> = self
            .entries
            .iter()
            .enumerate()
            .map(|(i, e)| (lfu_index(e, now), e.birth, e.id, i))
            .collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut doomed = vec![false; size];
        let mut evicted: Vec<u64> = Vec::with_capacity(excess);
        for &(_, _, id, i) in order.iter().take(excess) {
            doomed[i] = true;
            evicted.push(id);
        }
        let mut idx = 0;
        self.entries.retain(|_| {
            let keep = !doomed[idx];
            idx += 1;
            keep
        });
        self.stats.evictions += excess as u64;
        Ok(evicted)
    }

    /// Sum of stored key and value components, for memory accounting.
    pub fn stored_floats(&self) -> usize {
        self.entries.len() * (self.config.key_dim + self.config.value_dim)
    }
}

fn check_dims(config: &BankConfig, key: &Vec32, value: &Vec32) -> Result<()> {
    if key.dim() != config.key_dim {
        return Err(Error::DimMismatch {
            expected: config.key_dim,
            got: key.dim(),
        });
    }
    if value.dim() != config.value_dim {
        return Err(Error::DimMismatch {
            expected: config.value_dim,
            got: value.dim(),
        });
    }
    Ok(())
}

#[inline]
pub(crate) fn ema(stored: &mut [f32], new: &[f32], lambda: f32) {
    for (s, &n) in stored.iter_mut().zip(new) {
        *s = lambda * *s + (1.0 - lambda) * n;
    }
}

pub(crate) fn unit_rms(v: &mut [f32]) {
    let n = norm(v);
    if n > 0.0 {
        let scale = ((v.len() as f64).sqrt() / n) as f32;
        v.iter_mut().for_each(|x| *x *= scale);
    }
}
