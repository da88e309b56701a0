use std::path::Path;

use afb_core::refinement::{train_scorer, RefineSample, ScorerObjective};
use afb_core::synthgen::Dataset;
use afb_core::{PipelineConfig, Scorer, Segmenter};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const GRAD_STEP: f64 = 1e-6;
pub const GRAD_TOL: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainedScorer {
    pub scorer: Scorer,
    pub loss_curve: Vec<f64>,
    pub rejected_steps: usize,
    /// Largest relative gradient error seen, when checked.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grad_check: Option<f64>,
}

/// Refinement inputs for frames `1..=max_frames` of the dataset, with the
/// ground truth of each frame.
pub fn collect_samples(data: &Path, cfg: &PipelineConfig, max_frames: Option<usize>) -> CliResult<Vec<RefineSample>> {
    let ds = Dataset::open(data)?;
    let mut seg = Segmenter::new(cfg.clone(), &ds.frame(0)?, &ds.mask(0)?, ds.meta().num_objects)?;
    let end = max_frames.map_or(ds.len(), |m| ds.len().min(m + 1));
    let mut samples = Vec::with_capacity(end.saturating_sub(1));
    for t in 1..end {
        let (_, s) = seg.step_with_sample(&ds.frame(t)?, &ds.mask(t)?)?;
        samples.push(s);
    }
    if samples.is_empty() {
        return Err(CliError::Data("no frames to train on".into()));
    }
    Ok(samples)
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Largest relative error between the analytic gradient and central
/// differences at `(w, b)`.
pub fn gradient_error(obj: &ScorerObjective, w: f64, b: f64) -> CliResult<f64> {
    let (_, g) = obj.loss_and_grad(w, b)?;
    let h = GRAD_STEP;
    let fw = (obj.loss(w + h, b)? - obj.loss(w - h, b)?) / (2.0 * h);
    let fb = (obj.loss(w, b + h)? - obj.loss(w, b - h)?) / (2.0 * h);
    Ok(rel_err(g[0], fw).max(rel_err(g[1], fb)))
}

pub fn train(
    samples: &[RefineSample],
    cfg: &PipelineConfig,
    steps: usize,
    lr: f64,
    check_grad: bool,
) -> CliResult<TrainedScorer> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(CliError::Usage(format!("learning rate must be positive, got {lr}")));
    }
    let init = Scorer::trainable();
    let out = train_scorer(samples, init, &cfg.refine, cfg.lambda_u, steps, lr)?;
    let grad_check = if check_grad {
        let obj = ScorerObjective::new(samples, cfg.refine.radius, cfg.refine.u_threshold, cfg.lambda_u)?;
        let mut worst = 0f64;
        for s in [init, out.scorer] {
            if let Scorer::TrainableAffine { w, b } = s {
                worst = worst.max(gradient_error(&obj, w, b)?);
            }
        }
        Some(worst)
    } else {
        None
    };
    Ok(TrainedScorer {
        scorer: out.scorer,
        loss_curve: out.curve,
        rejected_steps: out.rejected_steps,
        grad_check,
    })
}
