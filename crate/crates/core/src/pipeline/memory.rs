//! Per-object memory policies behind one interface.

use std::collections::VecDeque;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_bank::{ema, unit_rms, BankConfig, FeatureBank, FeaturePair};
use crate::numerics::cosine;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemoryPolicy {
    /// Adaptive feature bank: merge, append, evict.
    #[default]
    Afb,
    First,
    Latest,
    FirstLatest,
    FirstLatest5,
}

impl MemoryPolicy {
    pub const ALL: [MemoryPolicy; 5] = [
        MemoryPolicy::Afb,
        MemoryPolicy::First,
        MemoryPolicy::Latest,
        MemoryPolicy::FirstLatest,
        MemoryPolicy::FirstLatest5,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MemoryPolicy::Afb => "afb",
            MemoryPolicy::First => "first",
            MemoryPolicy::Latest => "latest",
            MemoryPolicy::FirstLatest => "first_latest",
            MemoryPolicy::FirstLatest5 => "first_latest5",
        }
    }
}

impl std::fmt::Display for MemoryPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MemoryPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MemoryPolicy::ALL.into_iter().find(|p| p.name() == s).ok_or_else(|| {
            Error::InvalidConfig(format!(
                "unknown memory policy '{s}' (afb|first|latest|first_latest|first_latest5)"
            ))
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryStats {
    pub size: usize,
    pub merges: u64,
    pub appends: u64,
    pub evictions: u64,
}

/// Shrinks a first-frame feature set to `budget`: greedy merging with the
/// bank's own rule, then an evenly spaced subsample if still too large.
pub fn pool_to_budget(features: Vec<FeaturePair>, cfg: &BankConfig) -> Vec<FeaturePair> {
    if features.len() <= cfg.budget {
        return features;
    }
    let mut pooled: Vec<FeaturePair> = Vec::new();
    for (k, v) in features {
        let mut best: Option<(usize, f32)> = None;
        for (j, (pk, _)) in pooled.iter().enumerate() {
            if let Ok(c) = cosine(&k, pk) {
                if best.is_none_or(|(_, b)| c > b) {
                    best = Some((j, c));
                }
            }
        }
        match best {
            Some((j, c)) if c > cfg.epsilon_h => {
                let (pk, pv) = &mut pooled[j];
                ema(pk.as_mut_slice(), &k, cfg.lambda_p);
                ema(pv.as_mut_slice(), &v, cfg.lambda_p);
                if cfg.normalize_keys {
                    unit_rms(pk.as_mut_slice());
                }
            }
            _ => pooled.push((k, v)),
        }
    }
    let n = pooled.len();
    if n <= cfg.budget {
        return pooled;
    }
    let keep: Vec<usize> = (0..cfg.budget).map(|i| i * n / cfg.budget).collect();
    let mut out = Vec::with_capacity(cfg.budget);
    let mut it = keep.into_iter().peekable();
    for (i, f) in pooled.into_iter().enumerate() {
        if it.peek() == Some(&i) {
            out.push(f);
            it.next();
        }
    }
    out
}

#[derive(Clone, Debug)]
struct Window {
    keep_first: bool,
    keep_recent: usize,
    first: Vec<FeaturePair>,
    recent: VecDeque<Vec<FeaturePair>>,
    view: FeatureBank,
    base: BankConfig,
    appends: u64,
    evictions: u64,
}

impl Window {
    fn view(
        base: &BankConfig,
        first: &[FeaturePair],
        recent: &VecDeque<Vec<FeaturePair>>,
        frame: u64,
    ) -> Result<FeatureBank> {
        let all: Vec<FeaturePair> = first.iter().chain(recent.iter().flatten()).cloned().collect();
        let mut cfg = base.clone();
        cfg.budget = all.len().max(1);
        // Window memories store features verbatim.
        cfg.epsilon_h = 2.0;
        FeatureBank::init(cfg, all, frame)
    }

    fn rebuild(&mut self, frame: u64) -> Result<()> {
        let first: &[FeaturePair] = if self.keep_first { &self.first } else { &[] };
        self.view = Window::view(&self.base, first, &self.recent, frame)?;
        Ok(())
    }
}

/// Memory of one object (or the background).
#[derive(Clone, Debug)]
pub enum ObjectMemory {
    Adaptive(FeatureBank),
    Window(Box<WindowMemory>),
}

/// Fixed-frame memory: optionally the first frame plus the most recent frames.
#[derive(Clone, Debug)]
pub struct WindowMemory(Window);

impl ObjectMemory {
    pub fn new(policy: MemoryPolicy, cfg: &BankConfig, first: Vec<FeaturePair>, frame: u64) -> Result<Self> {
        if first.is_empty() {
            return Err(Error::Empty("first-frame features"));
        }
        let (keep_first, keep_recent) = match policy {
            MemoryPolicy::Afb => {
                let pooled = pool_to_budget(first, cfg);
                return Ok(ObjectMemory::Adaptive(FeatureBank::init(cfg.clone(), pooled, frame)?));
            }
            MemoryPolicy::First => (true, 0),
            MemoryPolicy::Latest => (false, 1),
            MemoryPolicy::FirstLatest => (true, 1),
            MemoryPolicy::FirstLatest5 => (true, 5),
        };
        let mut recent = VecDeque::new();
        if !keep_first {
            recent.push_back(first.clone());
        }
        let shown: &[FeaturePair] = if keep_first { &first } else { &[] };
        let view = Window::view(cfg, shown, &recent, frame)?;
        Ok(ObjectMemory::Window(Box::new(WindowMemory(Window {
            keep_first,
            keep_recent,
            appends: first.len() as u64,
            first,
            recent,
            view,
            base: cfg.clone(),
            evictions: 0,
        }))))
    }

    /// The bank to match against.
    pub fn bank(&self) -> &FeatureBank {
        match self {
            ObjectMemory::Adaptive(b) => b,
            ObjectMemory::Window(w) => &w.0.view,
        }
    }

    pub fn record_usage(&mut self, counts: &[u32]) -> Result<()> {
        match self {
            ObjectMemory::Adaptive(b) => b.record_usage(counts),
            ObjectMemory::Window(_) => Ok(()),
        }
    }

    pub fn absorb(&mut self, features: Vec<FeaturePair>, frame: u64) -> Result<()> {
        match self {
            ObjectMemory::Adaptive(b) => b.absorb(features, frame).map(|_| ()),
            ObjectMemory::Window(w) => {
                let w = &mut w.0;
                if features.is_empty() || w.keep_recent == 0 {
                    return Ok(());
                }
                w.appends += features.len() as u64;
                w.recent.push_back(features);
                while w.recent.len() > w.keep_recent {
                    if let Some(old) = w.recent.pop_front() {
                        w.evictions += old.len() as u64;
                    }
                }
                w.rebuild(frame)
            }
        }
    }

    pub fn stats(&self) -> MemoryStats {
        match self {
            ObjectMemory::Adaptive(b) => {
                let s = b.stats();
                MemoryStats {
                    size: b.len(),
                    merges: s.merges,
                    appends: s.appends,
                    evictions: s.evictions,
                }
            }
            ObjectMemory::Window(w) => MemoryStats {
                size: w.0.view.len(),
                merges: 0,
                appends: w.0.appends,
                evictions: w.0.evictions,
            },
        }
    }
}
