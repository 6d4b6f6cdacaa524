//! JSON run configuration: parsing, validation, and conversion into core
//! types. The `command` field selects the run; every other field is
//! command-specific and unknown keys are rejected.

use enstrack::ctrl_measure::{ControlRegion, VectorField};
use enstrack::discrete_tracking::TrackingMode;
use enstrack::lti::{LinearSystem, MatrixFn};
use enstrack::measures::{DiscreteMeasure, GaussianMeasure, Grid};
use enstrack::Matrix;
use serde::Deserialize;
use std::path::{Path, PathBuf};

use crate::CliError;

/// One matrix as nested rows, or a piecewise-constant table of them.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    Constant(Vec<Vec<f64>>),
    Table {
        times: Vec<f64>,
        values: Vec<Vec<Vec<f64>>>,
    },
}

impl MatrixSpec {
    pub fn to_matrix_fn(&self) -> Result<MatrixFn, CliError> {
        match self {
            MatrixSpec::Constant(rows) => Ok(MatrixFn::Constant(parse_matrix(rows)?)),
            MatrixSpec::Table { times, values } => {
                let mats = values
                    .iter()
                    .map(|rows| parse_matrix(rows))
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(MatrixFn::PiecewiseConstant {
                    times: times.clone(),
                    values: mats,
                })
            }
        }
    }

}

pub fn parse_matrix(rows: &[Vec<f64>]) -> Result<Matrix, CliError> {
    Matrix::from_rows(rows).map_err(|e| CliError::config(format!("bad matrix: {e}")))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    #[serde(rename = "A")]
    pub a: MatrixSpec,
    #[serde(rename = "B")]
    pub b: MatrixSpec,
    #[serde(rename = "C")]
    pub c: MatrixSpec,
    #[serde(default)]
    pub steps_per_unit: Option<usize>,
}

impl SystemSpec {
    pub fn build(&self) -> Result<LinearSystem, CliError> {
        let sys = LinearSystem::new(
            self.a.to_matrix_fn()?,
            self.b.to_matrix_fn()?,
            self.c.to_matrix_fn()?,
        )
        .map_err(|e| CliError::config(format!("bad system: {e}")))?;
        Ok(match self.steps_per_unit {
            Some(steps) => sys.with_steps_per_unit(steps),
            None => sys,
        })
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    pub nodes: Vec<usize>,
}

impl GridSpec {
    pub fn build(&self) -> Result<Grid, CliError> {
        Grid::uniform(&self.min, &self.max, &self.nodes)
            .map_err(|e| CliError::config(format!("bad grid: {e}")))
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianSpec {
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
}

impl GaussianSpec {
    pub fn build(&self) -> Result<GaussianMeasure, CliError> {
        GaussianMeasure::new(self.mean.clone(), parse_matrix(&self.cov)?)
            .map_err(|e| CliError::config(format!("bad Gaussian: {e}")))
    }
}

/// A discrete measure: inline atoms, a CSV file, or a discretized Gaussian.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, untagged)]
pub enum MeasureSpec {
    Inline {
        atoms: Vec<Vec<f64>>,
        weights: Vec<f64>,
    },
    Csv {
        csv: PathBuf,
    },
    DiscretizedGaussian {
        gaussian: GaussianSpec,
        grid: GridSpec,
    },
}

impl MeasureSpec {
    pub fn build(&self, base_dir: &Path) -> Result<DiscreteMeasure, CliError> {
        match self {
            MeasureSpec::Inline { atoms, weights } => {
                DiscreteMeasure::new(atoms.clone(), weights.clone())
                    .map_err(|e| CliError::config(format!("bad measure: {e}")))
            }
            MeasureSpec::Csv { csv } => {
                let path = if csv.is_absolute() {
                    csv.clone()
                } else {
                    base_dir.join(csv)
                };
                crate::output::read_measure_csv(&path)
            }
            MeasureSpec::DiscretizedGaussian { gaussian, grid } => {
                let g = gaussian.build()?;
                let grid = grid.build()?;
                enstrack::measures::grid_discretize(&g, &grid)
                    .map_err(|e| CliError::config(format!("bad discretization: {e}")))
            }
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub enum FieldSpec {
    Constant(Vec<f64>),
    Affine { m: Vec<Vec<f64>>, b: Vec<f64> },
    GridSampled { grid: GridSpec, values: Vec<Vec<f64>> },
}

impl FieldSpec {
    pub fn build(&self) -> Result<VectorField, CliError> {
        Ok(match self {
            FieldSpec::Constant(v) => VectorField::Constant(v.clone()),
            FieldSpec::Affine { m, b } => VectorField::Affine {
                m: parse_matrix(m)?,
                b: b.clone(),
            },
            FieldSpec::GridSampled { grid, values } => VectorField::GridSampled {
                grid: grid.build()?,
                values: values.clone(),
            },
        })
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub enum RegionSpec {
    Box { min: Vec<f64>, max: Vec<f64> },
    Ball { center: Vec<f64>, radius: f64 },
}

impl RegionSpec {
    pub fn build(&self) -> Result<ControlRegion, CliError> {
        Ok(match self {
            RegionSpec::Box { min, max } => ControlRegion::Box {
                min: min.clone(),
                max: max.clone(),
            },
            RegionSpec::Ball { center, radius } => ControlRegion::Ball {
                center: center.clone(),
                radius: *radius,
            },
        })
    }
}

fn default_mode() -> String {
    "coupled".to_string()
}

fn default_samples() -> usize {
    200
}

fn default_seed() -> u64 {
    0
}

pub fn parse_mode(mode: &str) -> Result<TrackingMode, CliError> {
    match mode {
        "coupled" => Ok(TrackingMode::Coupled),
        "fixed_marginal" => Ok(TrackingMode::FixedMarginal),
        other => Err(CliError::config(format!(
            "mode must be \"coupled\" or \"fixed_marginal\", got \"{other}\""
        ))),
    }
}

/// The per-command configuration payloads (everything except `command`).
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GramianConfig {
    pub system: SystemSpec,
    pub horizon: [f64; 2],
    pub out_dir: PathBuf,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MinEnergyConfig {
    pub system: SystemSpec,
    pub x0: Vec<f64>,
    pub x1: Vec<f64>,
    pub horizon: [f64; 2],
    pub out_dir: PathBuf,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WassersteinConfig {
    pub mu: MeasureSpec,
    pub nu: MeasureSpec,
    #[serde(default = "default_p")]
    pub p: f64,
    pub out_dir: PathBuf,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn default_p() -> f64 {
    2.0
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackConfig {
    pub system: SystemSpec,
    pub outputs: Vec<MeasureSpec>,
    pub grid: GridSpec,
    #[serde(default = "default_mode")]
    pub mode: String,
    #[serde(default = "default_samples")]
    pub samples_per_interval: usize,
    pub out_dir: PathBuf,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackGaussianConfig {
    pub system: SystemSpec,
    pub outputs: Vec<GaussianSpec>,
    #[serde(default = "default_samples")]
    pub samples_per_interval: usize,
    pub out_dir: PathBuf,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservabilityConfig {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "C")]
    pub c: Vec<Vec<f64>>,
    pub out_dir: PathBuf,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CtrlMeasureConfig {
    pub field: FieldSpec,
    pub region: RegionSpec,
    pub mu0: MeasureSpec,
    pub mu1: MeasureSpec,
    pub t_max: f64,
    pub out_dir: PathBuf,
    #[serde(default = "default_seed")]
    pub seed: u64,
}
