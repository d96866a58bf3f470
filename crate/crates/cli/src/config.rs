//! Experiment configuration: a versioned JSON schema.
//!
//! Configs are strict — unknown keys are rejected so a typo fails loudly
//! instead of silently falling back to a default. Every run echoes its
//! parsed config into the manifest, making experiments diff-able.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use alphasde::error::{Error, Result};
use alphasde::fpe::Boundary;
use alphasde::integrate::Scheme;
use alphasde::model::Grid;
use alphasde::presets;

/// Schema revision this build understands.
pub const SCHEMA_VERSION: u32 = 1;

/// Validation error constructor (the variant's fields are public; the core
/// crate's own shorthand is not).
pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    /// Path ensemble; writes `endpoints.csv` (and optionally `paths.bin`).
    Simulate,
    /// Discretized integral of W dW; writes `wdw_samples.csv`.
    Wdw,
    /// Density evolution under the forward equation; writes `density.csv`.
    FpeEvolve,
    /// Forward/backward/gap operator dumps; writes `operator_*.csv`.
    Operators,
    /// Steady density and quasipotential; writes `steady.csv`.
    Steady,
    /// Kernel time-reversal test; writes `reversal.csv`.
    Reversal,
    /// Built-in check battery; writes `report.csv`.
    ReportAll,
}

impl Experiment {
    pub fn label(&self) -> &'static str {
        match self {
            Experiment::Simulate => "simulate",
            Experiment::Wdw => "wdw",
            Experiment::FpeEvolve => "fpe-evolve",
            Experiment::Operators => "operators",
            Experiment::Steady => "steady",
            Experiment::Reversal => "reversal",
            Experiment::ReportAll => "report-all",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Preset name from the registry (`alphasde presets` lists them).
    pub preset: String,
    /// Overrides for the preset's named parameters.
    #[serde(default)]
    pub parameters: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisSpec {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

/// Grid specification: `{lo, hi, n}` for one dimension or
/// `{"x": {...}, "y": {...}}` for two.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GridConfig {
    OneD(AxisSpec),
    TwoD { x: AxisSpec, y: AxisSpec },
}

impl GridConfig {
    pub fn build(&self) -> Result<Grid> {
        match *self {
            GridConfig::OneD(a) => Grid::new_1d(a.lo, a.hi, a.n),
            GridConfig::TwoD { x, y } => Grid::new_2d((x.lo, x.hi, x.n), (y.lo, y.hi, y.n)),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    /// Total integration time.
    pub t: f64,
    /// Step size; experiments that can derive a stable default accept None.
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default)]
    pub n_paths: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Start point; defaults to the center of the grid or preset domain.
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundaryChoice {
    NoFlux,
    Absorbing,
}

impl From<BoundaryChoice> for Boundary {
    fn from(b: BoundaryChoice) -> Boundary {
        match b {
            BoundaryChoice::NoFlux => Boundary::NoFlux,
            BoundaryChoice::Absorbing => Boundary::Absorbing,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvolveConfig {
    /// Number of density snapshots to keep (including t = 0).
    #[serde(default = "default_snapshots")]
    pub snapshots: usize,
    #[serde(default = "default_boundary")]
    pub boundary: BoundaryChoice,
    /// Center of the Gaussian initial condition (defaults to the domain center).
    #[serde(default)]
    pub initial_center: Option<Vec<f64>>,
    /// Width of the Gaussian initial condition (defaults to 1/16 of the box).
    #[serde(default)]
    pub initial_sigma: Option<f64>,
}

fn default_snapshots() -> usize {
    9
}

fn default_boundary() -> BoundaryChoice {
    BoundaryChoice::NoFlux
}

impl Default for EvolveConfig {
    fn default() -> Self {
        EvolveConfig {
            snapshots: default_snapshots(),
            boundary: default_boundary(),
            initial_center: None,
            initial_sigma: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SteadyMethod {
    /// Quadrature in one dimension, operator null space otherwise.
    Auto,
    Quadrature,
    Nullspace,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SteadyConfig {
    #[serde(default = "default_method")]
    pub method: SteadyMethod,
    /// Noise strength for the quasipotential column.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

fn default_method() -> SteadyMethod {
    SteadyMethod::Auto
}

fn default_epsilon() -> f64 {
    1.0
}

impl Default for SteadyConfig {
    fn default() -> Self {
        SteadyConfig {
            method: default_method(),
            epsilon: default_epsilon(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReversalConfig {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub delta: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default)]
    pub dir: Option<String>,
    /// Also dump full trajectories in the binary format (simulate only).
    #[serde(default)]
    pub paths_binary: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub experiment: Experiment,
    pub alpha: f64,
    #[serde(default)]
    pub scheme: Option<String>,
    #[serde(default)]
    pub model: Option<ModelConfig>,
    #[serde(default)]
    pub grid: Option<GridConfig>,
    #[serde(default)]
    pub sim: Option<SimConfig>,
    #[serde(default)]
    pub evolve: Option<EvolveConfig>,
    #[serde(default)]
    pub steady: Option<SteadyConfig>,
    #[serde(default)]
    pub reversal: Option<ReversalConfig>,
    #[serde(default)]
    pub output: Option<OutputConfig>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig = serde_json::from_str(text)
            .map_err(|e| invalid("config", format!("schema violation: {e}")))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(invalid(
                "config",
                format!(
                    "schema_version {} is not supported (this build understands {})",
                    cfg.schema_version, SCHEMA_VERSION
                ),
            ));
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)?;
        RunConfig::from_json(&text)
    }

    pub fn scheme(&self) -> Result<Scheme> {
        match &self.scheme {
            Some(s) => Scheme::parse(s),
            None => Ok(Scheme::alpha_point()),
        }
    }

    /// Build the configured model, requiring one to be present.
    pub fn build_model(&self) -> Result<alphasde::SdeModel> {
        let mc = self.model.as_ref().ok_or_else(|| {
            invalid("model", "this experiment needs a `model` section")
        })?;
        presets::build(&mc.preset, &mc.parameters)
    }

    /// Build the configured grid, falling back to the preset's default
    /// domain with `n_default` cells per axis.
    pub fn build_grid(&self, n_default: usize) -> Result<Grid> {
        if let Some(g) = &self.grid {
            return g.build();
        }
        let mc = self.model.as_ref().ok_or_else(|| {
            invalid("grid", "need a `grid` section or a preset to take the domain from")
        })?;
        let info = presets::info(&mc.preset)?;
        match info.default_domain {
            [(lo, hi)] => Grid::new_1d(*lo, *hi, n_default),
            [(xl, xh), (yl, yh)] => Grid::new_2d((*xl, *xh, n_default), (*yl, *yh, n_default)),
            _ => Err(invalid("grid", "preset has no usable default domain")),
        }
    }

    pub fn sim(&self) -> Result<&SimConfig> {
        self.sim
            .as_ref()
            .ok_or_else(|| invalid("sim", "this experiment needs a `sim` section"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_wdw_config_parses() {
        let cfg = RunConfig::from_json(
            r#"{"schema_version":1,"experiment":"wdw","alpha":1.0,
                "sim":{"t":1.0,"dt":0.001,"n_paths":10000,"seed":7}}"#,
        )
        .unwrap();
        assert_eq!(cfg.experiment, Experiment::Wdw);
        assert_eq!(cfg.alpha, 1.0);
        assert_eq!(cfg.sim().unwrap().n_paths, Some(10000));
    }

    #[test]
    fn unknown_keys_are_rejected_with_location() {
        let err = RunConfig::from_json(
            r#"{"schema_version":1,"experiment":"wdw","alpha":1.0,"modle":{}}"#,
        )
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("modle"), "{msg}");
        assert!(msg.contains("line"), "{msg}");

        let nested = RunConfig::from_json(
            r#"{"schema_version":1,"experiment":"wdw","alpha":1.0,
                "sim":{"t":1.0,"dtt":0.1}}"#,
        )
        .unwrap_err();
        assert!(nested.to_string().contains("dtt"), "{nested}");
    }

    #[test]
    fn future_schema_version_is_refused() {
        let err = RunConfig::from_json(r#"{"schema_version":2,"experiment":"wdw","alpha":0.0}"#)
            .unwrap_err();
        assert!(err.to_string().contains("schema_version"));
    }

    #[test]
    fn grid_accepts_both_shapes() {
        let one: GridConfig =
            serde_json::from_str(r#"{"lo":-1.0,"hi":1.0,"n":32}"#).unwrap();
        assert!(one.build().unwrap().dim() == 1);
        let two: GridConfig = serde_json::from_str(
            r#"{"x":{"lo":-1.0,"hi":1.0,"n":16},"y":{"lo":0.0,"hi":2.0,"n":8}}"#,
        )
        .unwrap();
        assert!(two.build().unwrap().dim() == 2);
    }

    #[test]
    fn config_echo_roundtrips() {
        let text = r#"{"schema_version":1,"experiment":"steady","alpha":0.5,
            "model":{"preset":"double-well","parameters":{"epsilon":0.05}},
            "grid":{"lo":-2.0,"hi":2.0,"n":1024},
            "steady":{"method":"quadrature","epsilon":0.05}}"#;
        let cfg = RunConfig::from_json(text).unwrap();
        let echoed = serde_json::to_string(&cfg).unwrap();
        let again = RunConfig::from_json(&echoed).unwrap();
        assert_eq!(again.experiment, Experiment::Steady);
        assert_eq!(again.steady.unwrap().epsilon, 0.05);
    }
}
