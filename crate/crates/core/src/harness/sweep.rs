//! Parameter sweeps with log-log slope fits.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{
    field_difference, plane_wave_error, run_perturbed, run_reference, trace_difference,
    ForwardOptions,
};
use crate::identify::{sample_at, ControlParams};
use crate::model::{GridSpec, PlaneWaveProbe, Scenario};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    /// Inclusion scale, applied to every inclusion.
    Alpha,
    /// Lattice spacing at fixed Courant number.
    H,
    /// Time step at fixed lattice.
    Dt,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMetric {
    /// `sup_t (||E_a - E||^2 + ||curl(E_a - E)||^2)^{1/2}`.
    FieldDifference,
    /// `sup_t ||E_a - E||`.
    FieldL2,
    /// L2 norm of the boundary trace difference.
    TraceDifference,
    /// `|aleph(eta)|`.
    Aleph,
    /// Homogeneous solution against the exact plane wave.
    PlaneWaveError,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
    pub metric: SweepMetric,
    pub eta: [f64; 2],
    /// Courant number used when the lattice spacing is swept.
    #[serde(default = "default_courant")]
    pub courant: f64,
}

fn default_courant() -> f64 {
    0.8
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.values.len() < 3 {
            return Err(Error::Config(format!(
                "a sweep needs at least 3 values, got {}",
                self.values.len()
            )));
        }
        if self.values.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Config("sweep values must be positive".into()));
        }
        if !(self.courant > 0.0 && self.courant <= 1.0) {
            return Err(Error::Config(format!("courant must lie in (0, 1], got {}", self.courant)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub stderr: f64,
    pub intercept: f64,
}

/// Least-squares line through `(ln x, ln y)` with the standard error of the slope.
pub fn fit_loglog(x: &[f64], y: &[f64]) -> Result<SlopeFit> {
    if x.len() != y.len() || x.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "slope fit needs at least 3 paired points, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    if x.iter().chain(y).any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::InvalidArgument("slope fit needs positive finite data".into()));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument("slope fit needs distinct abscissae".into()));
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr: f64 = lx
        .iter()
        .zip(&ly)
        .map(|(a, b)| (b - intercept - slope * a).powi(2))
        .sum();
    let stderr = (ssr / (n - 2.0) / sxx).sqrt();
    Ok(SlopeFit {
        slope,
        stderr,
        intercept,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub parameter: SweepParameter,
    pub metric: SweepMetric,
    pub values: Vec<f64>,
    pub metrics: Vec<f64>,
    pub fit: Option<SlopeFit>,
    /// Set when a run failed; `values` and `metrics` then hold the runs
    /// before it.
    pub failure: Option<String>,
}

impl SweepReport {
    pub fn slope(&self) -> Option<f64> {
        self.fit.map(|f| f.slope)
    }
}

/// Metric for one sweep value.
pub fn evaluate(s: &Scenario, g: &GridSpec, spec: &SweepSpec, value: f64, params: &ControlParams) -> Result<f64> {
    let (s, g) = match spec.parameter {
        SweepParameter::Alpha => (s.with_alpha(value), *g),
        SweepParameter::H => (
            s.clone(),
            GridSpec::with_courant(value, spec.courant, s.domain.eps0, s.mu_min()),
        ),
        SweepParameter::Dt => (s.clone(), GridSpec { h: g.h, dt: value }),
    };
    let p = PlaneWaveProbe::new(spec.eta, &s.domain)?;
    Ok(match spec.metric {
        SweepMetric::FieldDifference => field_difference(&s, &g, &p)?.combined,
        SweepMetric::FieldL2 => field_difference(&s, &g, &p)?.field,
        SweepMetric::TraceDifference => {
            let a = run_perturbed(&s, &g, &p, &ForwardOptions::default())?.trace;
            let b = run_reference(&s, &g, &p)?;
            trace_difference(&a, &b)?.l2_norm()
        }
        SweepMetric::Aleph => sample_at(&s, &g, spec.eta, params)?.value.norm(),
        SweepMetric::PlaneWaveError => plane_wave_error(&s, &g, &p)?,
    })
}

/// Runs every value on the current rayon pool. A failure truncates the
/// report at the first failing value.
pub fn run_sweep(s: &Scenario, g: &GridSpec, spec: &SweepSpec, params: &ControlParams) -> Result<SweepReport> {
    spec.validate()?;
    let results: Vec<Result<f64>> = spec
        .values
        .par_iter()
        .map(|&v| evaluate(s, g, spec, v, params))
        .collect();
    let mut report = SweepReport {
        parameter: spec.parameter,
        metric: spec.metric,
        values: Vec::new(),
        metrics: Vec::new(),
        fit: None,
        failure: None,
    };
    for (v, r) in spec.values.iter().zip(results) {
        match r {
            Ok(m) => {
                report.values.push(*v);
                report.metrics.push(m);
            }
            Err(e) => {
                report.failure = Some(format!("{} = {v}: {e}", param_name(spec.parameter)));
                break;
            }
        }
    }
    if report.failure.is_none() {
        report.fit = Some(fit_loglog(&report.values, &report.metrics)?);
    }
    Ok(report)
}

fn param_name(p: SweepParameter) -> &'static str {
    match p {
        SweepParameter::Alpha => "alpha",
        SweepParameter::H => "h",
        SweepParameter::Dt => "dt",
    }
}
