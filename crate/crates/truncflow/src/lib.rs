//! File formats, scenario runs and verification suites on top of
//! `truncflow-core`.
//!
//! * [`config`]: the scenario JSON document.
//! * [`run`]: building, integrating and exporting a scenario.
//! * [`output`]: CSV tables.
//! * [`verify`]: seeded property suites, fanned out over a thread pool.

pub mod config;
pub mod error;
pub mod output;
pub mod run;
pub mod verify;

pub use config::ScenarioConfig;
pub use error::CliError;
