//! Run configuration: JSON schema, validation, and flag overrides.

use anyhow::{anyhow, bail, Context, Result};
use deform_core::ambient::{MetricField, Monomial};
use deform_core::evolve::BoundaryData;
use deform_core::grid::{Grid, GridSpec};
use deform_core::linearize::DeformationKind;
use deform_core::surface::Chart;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum MetricConfig {
    Euclidean,
    ConstantCurvature { kappa: f64 },
    CustomPolynomial { tables: [Vec<Monomial>; 6], m0: f64 },
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig::Euclidean
    }
}

impl MetricConfig {
    pub fn build(&self) -> Result<MetricField, deform_core::error::CoreError> {
        match self {
            MetricConfig::Euclidean => Ok(MetricField::euclidean()),
            MetricConfig::ConstantCurvature { kappa } => {
                Ok(MetricField::constant_curvature(*kappa))
            }
            MetricConfig::CustomPolynomial { tables, m0 } => {
                MetricField::custom_polynomial(tables.clone(), *m0)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub n_r: usize,
    pub n_theta: usize,
}

/// The full run configuration. Fields not needed by a given command may be
/// omitted in the JSON; unknown keys are always rejected.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub metric: MetricConfig,
    pub chart: Chart,
    pub grid: GridConfig,
    pub kind: DeformationKind,
    #[serde(default)]
    pub boundary: Option<BoundaryData>,
    #[serde(default)]
    pub t0: Option<f64>,
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default)]
    pub kernel_coeffs: Option<Vec<f64>>,
    #[serde(default)]
    pub fix_point: Option<usize>,
    #[serde(default)]
    pub tau_kernel: Option<f64>,
}

/// A parsed config together with the verbatim text it came from (re-emitted
/// untouched into the output directory).
pub struct LoadedConfig {
    pub raw: String,
    pub config: RunConfig,
}

pub fn load_config(path: &std::path::Path) -> Result<LoadedConfig> {
    let raw = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read config {}", path.display()))?;
    let config: RunConfig = serde_json::from_str(&raw)
        .with_context(|| format!("invalid config {}", path.display()))?;
    Ok(LoadedConfig { raw, config })
}

/// Parses the `--grid NRxNT` override.
pub fn parse_grid_flag(s: &str) -> Result<GridConfig> {
    let (a, b) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| anyhow!("--grid expects NRxNT, got {s:?}"))?;
    Ok(GridConfig {
        n_r: a.trim().parse().with_context(|| format!("bad ring count in --grid {s:?}"))?,
        n_theta: b.trim().parse().with_context(|| format!("bad angle count in --grid {s:?}"))?,
    })
}

impl RunConfig {
    pub fn build_grid(&self) -> Result<Grid, deform_core::error::CoreError> {
        Grid::new(GridSpec { n_r: self.grid.n_r, n_theta: self.grid.n_theta })
    }

    pub fn boundary(&self) -> Result<&BoundaryData> {
        self.boundary
            .as_ref()
            .ok_or_else(|| anyhow!("config is missing the \"boundary\" section"))
    }

    pub fn tau_kernel(&self) -> f64 {
        self.tau_kernel
            .unwrap_or(deform_core::rhsolver::DEFAULT_TAU_KERNEL)
    }

    /// Step count for an evolution run: t0 split into dt-sized steps.
    pub fn step_count(&self) -> Result<(f64, usize)> {
        let t0 = self.t0.ok_or_else(|| anyhow!("config is missing \"t0\""))?;
        let dt = self.dt.ok_or_else(|| anyhow!("config is missing \"dt\""))?;
        if !(dt > 0.0) || !(t0 > 0.0) {
            bail!("t0 and dt must be positive (got t0 = {t0}, dt = {dt})");
        }
        let n = (t0 / dt).round();
        if n < 1.0 || (t0 / dt - n).abs() > 1e-9 {
            bail!("t0 = {t0} is not an integer multiple of dt = {dt}");
        }
        Ok((dt, n as usize))
    }
}
