//! Error type shared by every module.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("CFL violated: dt = {dt} exceeds limit {limit}")]
    Cfl { dt: f64, limit: f64 },
    #[error("grid too coarse: h = {h} but at most {required} is needed to resolve the inclusions")]
    GridTooCoarse { h: f64, required: f64 },
    #[error("solver became unstable at step {step} (t = {t})")]
    Unstable { step: usize, t: f64 },
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("degenerate shape: {0}")]
    DegenerateShape(String),
    #[error("integral equation is ill-conditioned: {0}")]
    IllConditioned(String),
    #[error("geometric control condition not met: {0}")]
    GeometricControl(String),
    #[error("cutoff margin too large: {0}")]
    Margin(String),
    #[error("incomplete spectral lattice: {0}")]
    IncompleteLattice(String),
    #[error("rank-deficient tensor fit: {rows} real equations for {unknowns} unknowns (need at least {required} spectral samples)")]
    RankDeficient {
        rows: usize,
        unknowns: usize,
        required: usize,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
