//! Experiment plumbing shared by the command-line tool: configuration,
//! seeded noise, parameter sweeps and file formats.

pub mod config;
pub mod io;
pub mod noise;
pub mod sweep;
