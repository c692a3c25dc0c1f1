//! Command-line shell around the `kmyriad` library: configuration, checkpoints,
//! data files and the subcommands.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod io;
