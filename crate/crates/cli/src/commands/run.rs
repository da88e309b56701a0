use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use afb_core::synthgen::{mask_path, write_pgm, Dataset};
use afb_core::{FrameResult, PipelineConfig, Segmenter};
use serde::{Deserialize, Serialize};

use crate::error::{io_err, CliResult};

/// One line of `stats.jsonl`. Per-memory arrays list the background first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatsLine {
    pub frame: usize,
    pub per_object_bank_size: Vec<usize>,
    pub merges: Vec<u64>,
    pub appends: Vec<u64>,
    pub evictions: Vec<u64>,
    pub mean_u: f64,
    /// `null` when timing is omitted.
    pub runtime_ms: Option<f64>,
}

impl StatsLine {
    pub fn new(r: &FrameResult, timing: bool) -> Self {
        StatsLine {
            frame: r.frame,
            per_object_bank_size: r.banks.iter().map(|b| b.size).collect(),
            merges: r.banks.iter().map(|b| b.merges).collect(),
            appends: r.banks.iter().map(|b| b.appends).collect(),
            evictions: r.banks.iter().map(|b| b.evictions).collect(),
            mean_u: r.u_mean,
            runtime_ms: timing.then(|| r.elapsed.as_secs_f64() * 1e3),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct RunSummary {
    pub frames: usize,
    pub peak_stored_features: usize,
    pub mean_u: f64,
}

/// Segments frames `1..T` of the dataset at `data` from the frame-0 labels,
/// writing `masks/%06d.pgm` and `stats.jsonl` under `out`.
pub fn run(data: &Path, cfg: PipelineConfig, out: &Path, timing: bool) -> CliResult<RunSummary> {
    let ds = Dataset::open(data)?;
    let first = ds.frame(0)?;
    let labels = ds.mask(0)?;
    let mut seg = Segmenter::new(cfg, &first, &labels, ds.meta().num_objects)?;

    let masks = out.join("masks");
    fs::create_dir_all(&masks).map_err(|e| io_err(&masks, e))?;
    let stats_path = out.join("stats.jsonl");
    let file = fs::File::create(&stats_path).map_err(|e| io_err(&stats_path, e))?;
    let mut stats = BufWriter::new(file);

    let mut summary = RunSummary::default();
    let mut u_total = 0.0;
    for t in 1..ds.len() {
        let r = seg.step(&ds.frame(t)?, None)?;
        write_pgm(&mask_path(out, t), &r.labels)?;
        let line = serde_json::to_string(&StatsLine::new(&r, timing))?;
        writeln!(stats, "{line}").map_err(|e| io_err(&stats_path, e))?;
        summary.frames += 1;
        summary.peak_stored_features = summary.peak_stored_features.max(r.stored_features());
        u_total += r.u_mean;
    }
    stats.flush().map_err(|e| io_err(&stats_path, e))?;
    if summary.frames > 0 {
        summary.mean_u = u_total / summary.frames as f64;
    }
    Ok(summary)
}
