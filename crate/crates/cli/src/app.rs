//! Argument parsing and output for the `afb` binary.

use std::fs;
use std::path::{Path, PathBuf};

use afb_core::synthgen::{load_dataset, Motion, StreamKind, StreamSpec};
use afb_core::{MemoryPolicy, PipelineConfig, SceneSpec, Scorer};
use clap::{Args, Parser, Subcommand};

use crate::commands::{self, Variant};
use crate::config;
use crate::error::{io_err, CliError, CliResult};

#[derive(Debug, Parser)]
#[command(
    name = "afb",
    version,
    about = "Video object segmentation with an adaptive feature bank"
)]
pub struct Cli {
    /// Worker threads (defaults to one per core).
    #[arg(long, global = true, env = "AFB_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic dataset.
    Generate(GenerateArgs),
    /// Segment a dataset from its first-frame labels.
    Run(RunArgs),
    /// Score predicted masks against ground truth.
    Eval(EvalArgs),
    /// Stream synthetic features through a bank.
    Bench(BenchArgs),
    /// Compare memory policies and refinement on one dataset.
    Ablate(AblateArgs),
    /// Fit the affine refinement scorer.
    TrainScorer(TrainArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 128)]
    pub width: usize,
    #[arg(long, default_value_t = 128)]
    pub height: usize,
    #[arg(long, default_value_t = 2)]
    pub objects: usize,
    #[arg(long, default_value_t = 50)]
    pub frames: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Hue turns per frame.
    #[arg(long, default_value_t = 0.0)]
    pub drift: f32,
    /// static, linear or sinusoidal.
    #[arg(long, default_value = "linear")]
    pub motion: Motion,
    /// Let objects cross each other.
    #[arg(long)]
    pub occlusion: bool,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides `memory_policy` from the config.
    #[arg(long)]
    pub policy: Option<String>,
    /// Scorer JSON, as written by `train-scorer`.
    #[arg(long)]
    pub scorer: Option<PathBuf>,
    /// Write `runtime_ms` as null so output is byte-reproducible.
    #[arg(long)]
    pub omit_timing: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Run output directory or a directory of `%06d.pgm` masks.
    #[arg(long)]
    pub pred: PathBuf,
    /// Dataset directory.
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// clustered, drifting or uniform.
    #[arg(long, default_value = "clustered")]
    pub stream: String,
    #[arg(long, default_value_t = 50)]
    pub features_per_frame: usize,
    #[arg(long, default_value_t = 200)]
    pub frames: usize,
    /// Overrides `budget` from the config.
    #[arg(long)]
    pub budget: Option<usize>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 32)]
    pub dim: usize,
    #[arg(long, default_value_t = 8)]
    pub clusters: usize,
    #[arg(long, default_value_t = 0.05)]
    pub sigma: f32,
    #[arg(long)]
    pub omit_timing: bool,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated subset of afb, first, latest, first_latest,
    /// first_latest5, afb_no_urr.
    #[arg(long, value_delimiter = ',')]
    pub variants: Vec<String>,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    pub steps: usize,
    #[arg(long, default_value_t = 0.5)]
    pub lr: f64,
    #[arg(long)]
    pub out: PathBuf,
    /// Train on at most this many frames after the first.
    #[arg(long)]
    pub max_frames: Option<usize>,
    /// Compare analytic and finite-difference gradients; fail on mismatch.
    #[arg(long)]
    pub check_grad: bool,
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn load_scorer(path: &Path) -> CliResult<Scorer> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let v: serde_json::Value = serde_json::from_str(&text)?;
    let v = v.get("scorer").cloned().unwrap_or(v);
    Ok(serde_json::from_value(v)?)
}

fn run_config(path: Option<&Path>) -> CliResult<PipelineConfig> {
    Ok(config::load(path)?)
}

pub fn execute(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Internal(e.to_string()))?;
    }
    match cli.command {
        Command::Generate(a) => {
            let spec = SceneSpec {
                width: a.width,
                height: a.height,
                num_objects: a.objects,
                frames: a.frames,
                seed: a.seed,
                motion: a.motion,
                drift: a.drift,
                occlusion: a.occlusion,
                ..Default::default()
            };
            let meta = commands::generate(&spec, &a.out)?;
            eprintln!("wrote {} frames to {}", meta.frames, a.out.display());
        }
        Command::Run(a) => {
            let mut cfg = run_config(a.config.as_deref())?;
            if let Some(p) = &a.policy {
                cfg.memory_policy = p.parse::<MemoryPolicy>()?;
            }
            if let Some(s) = &a.scorer {
                cfg.refine.scorer = load_scorer(s)?;
            }
            let summary = commands::run(&a.data, cfg, &a.out, !a.omit_timing)?;
            println!("{}", serde_json::to_string(&summary)?);
        }
        Command::Eval(a) => {
            let report = commands::eval(&a.pred, &a.gt)?;
            if let Some(p) = &a.report {
                write_json(p, &report)?;
            }
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Bench(a) => {
            let mut bank = run_config(a.config.as_deref())?.bank;
            if let Some(b) = a.budget {
                bank.budget = b;
            }
            let spec = StreamSpec {
                kind: a.stream.parse::<StreamKind>()?,
                dim: a.dim,
                clusters: a.clusters,
                sigma: a.sigma,
                features_per_frame: a.features_per_frame,
                frames: a.frames,
                seed: a.seed,
                ..Default::default()
            };
            let report = commands::bench(&spec, &bank, !a.omit_timing)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Ablate(a) => {
            let cfg = run_config(a.config.as_deref())?;
            let variants = if a.variants.is_empty() {
                Variant::ALL.to_vec()
            } else {
                a.variants.iter().map(|s| s.parse()).collect::<CliResult<Vec<_>>>()?
            };
            let video = load_dataset(&a.data)?;
            let rows = commands::ablate(&video, &cfg, &variants)?;
            if let Some(p) = &a.report {
                write_json(p, &rows)?;
            }
            print!("{}", commands::ablate::table(&rows));
        }
        Command::TrainScorer(a) => {
            let cfg = run_config(a.config.as_deref())?;
            let samples = commands::collect_samples(&a.data, &cfg, a.max_frames)?;
            let out = commands::train(&samples, &cfg, a.steps, a.lr, a.check_grad)?;
            for (i, l) in out.loss_curve.iter().enumerate() {
                println!("step {i:>4}  loss {l:.6}");
            }
            write_json(&a.out, &out)?;
            if let Some(err) = out.grad_check {
                println!("gradient check: max relative error {err:.3e}");
                if err >= commands::train::GRAD_TOL {
                    return Err(CliError::Internal(format!(
                        "gradient check failed: relative error {err:.3e} >= {:.0e}",
                        commands::train::GRAD_TOL
                    )));
                }
            }
        }
    }
    Ok(())
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
