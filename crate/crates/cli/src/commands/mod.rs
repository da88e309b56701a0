//! One module per subcommand. Each exposes an in-process entry point that
//! returns its report; printing and file output live in [`crate::app`].

pub mod ablate;
pub mod bench;
pub mod eval;
pub mod generate;
pub mod run;
pub mod train;

pub use ablate::{ablate, AblationRow, Variant};
pub use bench::{bench, BenchReport};
pub use eval::eval;
pub use generate::generate;
pub use run::{run, RunSummary, StatsLine};
pub use train::{collect_samples, train, TrainedScorer};
