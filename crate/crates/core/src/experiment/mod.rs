//! Configuration-driven agent-environment runs and their outputs.

pub mod batch;
pub mod config;
pub mod output;
pub mod plot;
pub mod run;

pub use batch::{run_batch, BatchResult, Manifest};
pub use config::{parse_seeds, AgentKind, RunConfig, ScheduleConfig};
pub use run::{run_single, simulate, CurvePoint, EpisodeRecord, RunLog, SimOptions, StepRecord};
