//! Imaging of small permeability inclusions from time-domain boundary
//! measurements of a two-dimensional Maxwell (TE) system.

pub mod control;
pub mod error;
pub mod forward;
pub mod harness;
pub mod identify;
pub mod model;
pub mod potentials;
pub mod weights;
pub mod yee;

pub use error::{Error, Result};
