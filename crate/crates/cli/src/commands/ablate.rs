use std::str::FromStr;

use afb_core::metrics::evaluate;
use afb_core::{segment_video, MemoryPolicy, PipelineConfig, VideoSequence};
use serde::Serialize;

use crate::error::{CliError, CliResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Policy(MemoryPolicy),
    /// Adaptive bank with refinement switched off.
    AfbNoUrr,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Policy(MemoryPolicy::Afb),
        Variant::Policy(MemoryPolicy::First),
        Variant::Policy(MemoryPolicy::Latest),
        Variant::Policy(MemoryPolicy::FirstLatest),
        Variant::Policy(MemoryPolicy::FirstLatest5),
        Variant::AfbNoUrr,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Policy(p) => p.name(),
            Variant::AfbNoUrr => "afb_no_urr",
        }
    }

    /// `u_threshold = 1.0` disables refinement since `U ≤ 1`.
    pub fn apply(self, base: &PipelineConfig) -> PipelineConfig {
        let mut cfg = base.clone();
        match self {
            Variant::Policy(p) => cfg.memory_policy = p,
            Variant::AfbNoUrr => {
                cfg.memory_policy = MemoryPolicy::Afb;
                cfg.refine.u_threshold = 1.0;
            }
        }
        cfg
    }
}

impl FromStr for Variant {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        Variant::ALL.into_iter().find(|v| v.name() == s).ok_or_else(|| {
            let names: Vec<_> = Variant::ALL.iter().map(|v| v.name()).collect();
            CliError::Usage(format!("unknown variant '{s}' ({})", names.join("|")))
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub variant: &'static str,
    #[serde(rename = "JF_M")]
    pub jf_mean: f64,
    #[serde(rename = "J_M")]
    pub j_mean: f64,
    #[serde(rename = "F_M")]
    pub f_mean: f64,
}

/// Segments `video` once per variant and scores frames `1..T`.
pub fn ablate(video: &VideoSequence, base: &PipelineConfig, variants: &[Variant]) -> CliResult<Vec<AblationRow>> {
    if video.len() < 2 {
        return Err(CliError::Data("ablation needs at least two frames".into()));
    }
    let gt = &video.gt[1..];
    variants
        .iter()
        .map(|&v| {
            let results = segment_video(video, &v.apply(base))?;
            let pred: Vec<_> = results.into_iter().map(|r| r.labels).collect();
            let rep = evaluate(&pred, gt, video.num_objects)?;
            Ok(AblationRow {
                variant: v.name(),
                jf_mean: rep.jf_mean,
                j_mean: rep.j.mean,
                f_mean: rep.f.mean,
            })
        })
        .collect()
}

pub fn table(rows: &[AblationRow]) -> String {
    let mut s = format!("{:<14} {:>7} {:>7} {:>7}\n", "variant", "J&F-M", "J-M", "F-M");
    for r in rows {
        s += &format!(
            "{:<14} {:>7.4} {:>7.4} {:>7.4}\n",
            r.variant, r.jf_mean, r.j_mean, r.f_mean
        );
    }
    s
}
