//! Machine-readable result file: config echo, fitted coefficients with
//! the basis transform needed for out-of-sample reconstruction, solve
//! and residual reports, and the formulation comparison.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::basis::BasisSpec;
use crate::diagnostics::ComparisonRecord;
use crate::error::{Error, Result};
use crate::solve::{MethodTag, SolveReport};

pub const RESULT_VERSION: u32 = 1;

/// Everything needed to re-evaluate the fitted basis on new states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredBasis {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<BasisSpec>,
    /// Orthonormalization transform, row per raw feature.
    pub transform: Vec<Vec<f64>>,
    pub basis_id: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dropped_columns: Vec<usize>,
}

impl StoredBasis {
    pub fn transform_matrix(&self) -> DMatrix<f64> {
        let rows = self.transform.len();
        let cols = self.transform.first().map_or(0, |r| r.len());
        DMatrix::from_fn(rows, cols, |r, c| self.transform[r][c])
    }
}

pub fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|r| (0..m.ncols()).map(|c| m[(r, c)]).collect())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveSummary {
    pub residual_norm: f64,
    pub rank: usize,
    pub condition_estimate: f64,
    pub method: MethodTag,
}

impl From<&SolveReport> for SolveSummary {
    fn from(r: &SolveReport) -> Self {
        Self {
            residual_norm: r.residual_norm,
            rank: r.rank,
            condition_estimate: r.condition_estimate,
            method: r.method,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualSummary {
    pub full_residual: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub projected_residual: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tested_moments: Option<f64>,
}

/// One fitted formulation at one lambda.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub formulation: String,
    pub lambda: f64,
    /// `m x r`, row per instrument.
    pub coefficients: Vec<Vec<f64>>,
    /// Full pathwise residual on a fresh-seed sample (lambda sweeps only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub held_out_full_residual: Option<f64>,
    pub solve: SolveSummary,
    pub residuals: ResidualSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub n_paths: usize,
    /// Omitted in deterministic mode so reruns are bitwise identical.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub runtime_ms: Option<u64>,
    /// Paths inside the payoff kink band.
    pub kink_path_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultFile {
    pub version: u32,
    pub config: super::config::ExperimentConfig,
    pub basis: StoredBasis,
    pub fits: Vec<FitRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comparison: Option<ComparisonRecord>,
    pub metadata: RunMetadata,
}

impl ResultFile {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self)
            .map_err(|e| Error::Config(format!("result serialization: {}", e)))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let result: ResultFile = toml::from_str(&text)
            .map_err(|e| Error::CorruptFile(format!("{}: {}", path.display(), e)))?;
        if result.version != RESULT_VERSION {
            return Err(Error::CorruptFile(format!(
                "{}: result version {} (expected {})",
                path.display(),
                result.version,
                RESULT_VERSION
            )));
        }
        Ok(result)
    }

    pub fn fit(&self, formulation: Option<&str>) -> Result<&FitRecord> {
        match formulation {
            Some(name) => self
                .fits
                .iter()
                .find(|f| f.formulation == name)
                .ok_or_else(|| {
                    Error::Config(format!("result file has no '{}' fit", name))
                }),
            None => self
                .fits
                .first()
                .ok_or_else(|| Error::Config("result file has no fits".into())),
        }
    }
}
