//! Benchmark orchestration: run configuration, the strategy pipelines,
//! run directories, profiling and reports.

pub mod config;
pub mod pipelines;
pub mod profile;
pub mod report;
pub mod run;

pub use config::{RunConfig, ToyEncoderSettings, CONFIG_VERSION};
pub use profile::{profile_toy, Phase, ProfilePair, ProfileRecord, ProfileRow};
pub use report::{report, ReportFormat};
pub use run::{profile_run, run, run_with_client, RunOutcome, RunStatus};
