//! Seeded additive noise on boundary traces.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::BoundaryTrace;
use crate::model::C64;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKind {
    #[default]
    None,
    AdditiveGaussian,
}

/// Complex Gaussian noise whose expected norm is `level` times the trace norm.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseModel {
    pub kind: NoiseKind,
    pub level: f64,
    pub seed: u64,
}

impl NoiseModel {
    pub fn gaussian(level: f64, seed: u64) -> Self {
        Self {
            kind: NoiseKind::AdditiveGaussian,
            level,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.level >= 0.0 && self.level.is_finite()) {
            return Err(Error::Config(format!("noise level must be >= 0, got {}", self.level)));
        }
        Ok(())
    }

    pub fn is_active(&self) -> bool {
        self.kind == NoiseKind::AdditiveGaussian && self.level > 0.0
    }

    /// Independent generator for stream `k` (e.g. a lattice index).
    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }
}

/// Adds noise drawn from stream 0.
pub fn add_noise(trace: &BoundaryTrace, nm: &NoiseModel) -> BoundaryTrace {
    add_noise_stream(trace, nm, 0)
}

/// Adds noise from an independent stream. A first time row that is exactly
/// zero (a difference trace) stays zero.
pub fn add_noise_stream(trace: &BoundaryTrace, nm: &NoiseModel, stream: u64) -> BoundaryTrace {
    let mut out = trace.clone();
    if !nm.is_active() {
        return out;
    }
    let m = trace.n_arc();
    let skip = if trace.row(0).iter().all(|v| *v == C64::default()) { m } else { 0 };
    let count = trace.values.len() - skip;
    if count == 0 {
        return out;
    }
    let norm = trace.values.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    let sigma = nm.level * norm / (2.0 * count as f64).sqrt();
    let mut rng = nm.rng(stream);
    for v in &mut out.values[skip..] {
        let re: f64 = StandardNormal.sample(&mut rng);
        let im: f64 = StandardNormal.sample(&mut rng);
        *v += C64::new(re, im) * sigma;
    }
    out
}
