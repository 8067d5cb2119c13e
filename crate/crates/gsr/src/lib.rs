//! Std companion of `gsr-core`: dataset loaders, binary checkpoints, run
//! configuration, the parallel grid runner, reports and the `gsr` CLI.

pub mod bundle;
pub mod cli;
pub mod config;
pub mod datasets;
pub mod error;
pub mod formats;
pub mod grid;
pub mod report;
pub mod verify;

pub use error::{Error, Result};
