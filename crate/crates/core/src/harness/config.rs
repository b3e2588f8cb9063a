//! Versioned experiment configuration.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::noise::NoiseModel;
use crate::harness::sweep::SweepSpec;
use crate::identify::{ControlParams, SpectralGrid};
use crate::model::{validate_scenario, GridSpec, Scenario};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReconstructionParams {
    /// Peaks below this fraction of the largest image magnitude are ignored.
    pub rel_threshold: f64,
    /// Minimum distance between reported centers; `c0 / 2` when absent.
    pub min_separation: Option<f64>,
}

impl Default for ReconstructionParams {
    fn default() -> Self {
        Self {
            rel_threshold: 0.5,
            min_separation: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub scenario: Scenario,
    pub grid: GridSpec,
    /// Wave vector for single-probe commands.
    #[serde(default)]
    pub probe: Option<[f64; 2]>,
    #[serde(default)]
    pub spectral: Option<SpectralGrid>,
    #[serde(default)]
    pub control: ControlParams,
    #[serde(default)]
    pub noise: NoiseModel,
    #[serde(default)]
    pub reconstruction: ReconstructionParams,
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
    /// Directory for outputs that are not named on the command line.
    #[serde(default = "default_output")]
    pub output_dir: String,
}

fn default_output() -> String {
    "out".into()
}

impl ExperimentConfig {
    pub fn new(scenario: Scenario, grid: GridSpec) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            scenario,
            grid,
            probe: None,
            spectral: None,
            control: ControlParams::default(),
            noise: NoiseModel::default(),
            reconstruction: ReconstructionParams::default(),
            sweep: None,
            output_dir: default_output(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = parse_json(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let cfg: Self = load_json(path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Pipeline parameters with the configured noise attached.
    pub fn pipeline_params(&self) -> ControlParams {
        ControlParams {
            noise: self.noise,
            ..self.control.clone()
        }
    }

    pub fn min_separation(&self) -> f64 {
        self.reconstruction
            .min_separation
            .unwrap_or(0.5 * self.scenario.c0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        validate_scenario(&self.scenario)
            .into_result()
            .map_err(|e| Error::Config(e.to_string()))?;
        self.grid
            .check_cfl(&self.scenario)
            .map_err(|e| Error::Config(e.to_string()))?;
        if let Some(sg) = &self.spectral {
            sg.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        self.noise.validate()?;
        let c = &self.control;
        if !(c.tol > 0.0) || c.max_iters == 0 || !(c.margin > 0.0) {
            return Err(Error::Config(
                "control needs tol > 0, max_iters > 0 and margin > 0".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.reconstruction.rel_threshold) {
            return Err(Error::Config("rel_threshold must lie in [0, 1]".into()));
        }
        if let Some(sw) = &self.sweep {
            sw.validate()?;
        }
        Ok(())
    }
}

/// Parses JSON, reporting the line and column of any error.
pub fn parse_json<T: DeserializeOwned>(text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| {
        Error::Config(format!("line {}, column {}: {e}", e.line(), e.column()))
    })
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_json(&text).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DomainSpec, InclusionShape, InclusionSpec, Rect};

    fn config() -> ExperimentConfig {
        let domain = DomainSpec::new(
            Rect {
                x0: -1.0,
                y0: -1.0,
                x1: 1.0,
                y1: 1.0,
            },
            5.657,
        );
        let scenario = Scenario {
            domain,
            inclusions: vec![InclusionSpec {
                center: [0.3, 0.2],
                alpha: 0.05,
                shape: InclusionShape::disk(1.0),
                mu: 2.0,
            }],
            c0: 0.1,
        };
        let mut cfg = ExperimentConfig::new(scenario, GridSpec::with_courant(0.025, 0.8, 1.0, 1.0));
        cfg.spectral = Some(SpectralGrid::new(8.0, 17).unwrap());
        cfg.noise = NoiseModel::gaussian(0.01, 9);
        cfg
    }

    #[test]
    fn round_trips_exactly() {
        let cfg = config();
        let text = cfg.to_json().unwrap();
        let back = ExperimentConfig::from_json(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_json().unwrap(), text);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let mut v: serde_json::Value = serde_json::from_str(&config().to_json().unwrap()).unwrap();
        v["bogus"] = serde_json::json!(1);
        assert!(matches!(ExperimentConfig::from_json(&v.to_string()), Err(Error::Config(_))));
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let err = ExperimentConfig::from_json("{\n  \"schema_version\": 1,\n  oops\n}").unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
    }

    #[test]
    fn wrong_schema_version_is_rejected() {
        let mut cfg = config();
        cfg.schema_version = 99;
        assert!(ExperimentConfig::from_json(&cfg.to_json().unwrap()).is_err());
    }
}
