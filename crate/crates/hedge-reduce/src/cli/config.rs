//! Declarative experiment configuration: one TOML file describing the
//! model, product, primitive and instrument sets, bases, formulation,
//! and regularization. No environment variables affect numerics.

use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::basis::{BasisSpec, DEFAULT_DROP_TOL};
use crate::error::{Error, Result};
use crate::models::{GbmModel, Instrument, Primitive, ProductSpec};
use crate::solve::RegularizationSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Formulation {
    Ls,
    Projected,
    Both,
    Compare,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductConfig {
    #[serde(flatten)]
    pub spec: ProductSpec,
    /// Payoff maturity; must equal the model horizon when given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub maturity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct RegularizationConfig {
    #[serde(default)]
    pub lambda: f64,
    /// When present, one fit per lambda is produced, with in-sample and
    /// held-out residuals.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_grid: Option<Vec<f64>>,
    /// Prior coefficient vector in flat (instrument, basis) order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct OutputConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<PathBuf>,
    /// Optional CSV of per-path residual norms.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_path_csv: Option<PathBuf>,
}

fn default_cutover() -> usize {
    2000
}

fn default_block_size() -> usize {
    1024
}

fn default_drop_tol() -> f64 {
    DEFAULT_DROP_TOL
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub formulation: Formulation,
    pub model: GbmModel,
    pub product: ProductConfig,
    pub primitives: Vec<String>,
    pub instruments: Vec<Instrument>,
    pub solution_basis: BasisSpec,
    /// Absent means the Galerkin choice (test basis = solution basis).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_basis: Option<BasisSpec>,
    #[serde(default)]
    pub regularization: RegularizationConfig,
    #[serde(default)]
    pub deterministic: bool,
    /// Coefficient count above which the empirical-L2 fit switches to the
    /// matrix-free iterative solver.
    #[serde(default = "default_cutover")]
    pub matrix_free_cutover: usize,
    #[serde(default = "default_block_size")]
    pub block_size: usize,
    #[serde(default = "default_drop_tol")]
    pub drop_tol: f64,
    #[serde(default)]
    pub output: OutputConfig,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let config: ExperimentConfig = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {}", path.display(), e)))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.product.spec.validate()?;
        if let Some(maturity) = self.product.maturity {
            if (maturity - self.model.horizon).abs() > 1e-12 {
                return Err(Error::Config(format!(
                    "product maturity {} must equal the model horizon {}",
                    maturity, self.model.horizon
                )));
            }
        }
        if self.primitives.is_empty() {
            return Err(Error::Config("primitive set is empty".into()));
        }
        for p in &self.primitives {
            Primitive::parse(p)?;
        }
        if self.instruments.is_empty() {
            return Err(Error::Config("instrument set is empty".into()));
        }
        self.solution_basis.validate()?;
        if let Some(t) = &self.test_basis {
            t.validate()?;
        }
        if !(self.regularization.lambda >= 0.0) {
            return Err(Error::Config(format!(
                "lambda must be nonnegative, got {}",
                self.regularization.lambda
            )));
        }
        if let Some(grid) = &self.regularization.lambda_grid {
            if grid.is_empty() {
                return Err(Error::Config("lambda_grid is empty".into()));
            }
            for w in grid.windows(2) {
                if w[1] < w[0] {
                    return Err(Error::Config("lambda_grid must be ascending".into()));
                }
            }
            if !(grid[0] >= 0.0) {
                return Err(Error::Config("lambda_grid values must be nonnegative".into()));
            }
        }
        if !(self.drop_tol >= 0.0) {
            return Err(Error::Config("drop_tol must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn parsed_primitives(&self) -> Result<Vec<Primitive>> {
        self.primitives.iter().map(|p| Primitive::parse(p)).collect()
    }

    /// The lambda values to fit: the grid when present, otherwise the
    /// single configured lambda.
    pub fn lambdas(&self) -> Vec<f64> {
        match &self.regularization.lambda_grid {
            Some(grid) => grid.clone(),
            None => vec![self.regularization.lambda],
        }
    }

    pub fn regularization_spec(&self, lambda: f64) -> RegularizationSpec {
        RegularizationSpec {
            lambda,
            prior: self
                .regularization
                .prior
                .as_ref()
                .map(|p| DVector::from_column_slice(p)),
            ..Default::default()
        }
    }
}
