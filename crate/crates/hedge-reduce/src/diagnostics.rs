//! Residual monitoring, the pathwise-solve oracle, the
//! regression-after-pathwise baseline, and formulation comparison.
//!
//! A small projected residual does not imply a small full pathwise
//! residual, so both are always computed side by side; formulation choice
//! is never made silently.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::BasisSet;
use crate::error::{Error, Result};
use crate::reduce_ls::{assemble_normal, AssemblyMode};
use crate::reduce_projected::{assemble_projected, ProjectedSystem};
use crate::solve::{
    condition_estimate, solve_reduced, svd_min_norm_solve, Reduced, RegularizationSpec,
    SolveReport, DEFAULT_RCOND,
};
use crate::tensors::{
    validate_problem, HedgeCoefficients, HedgeRatioMatrix, PrimitiveSensitivities,
    SensitivityTensor,
};

/// Residual diagnostics at a given coefficient matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualReport {
    /// `(1/N) sum_l ||A_l phi_l^r - b_l||_2^2`.
    pub full_residual: f64,
    /// Per-path residual 2-norms `||A_l phi_l^r - b_l||_2`.
    pub per_path_norms: Vec<f64>,
    /// `||B_flat z - beta_flat||_2`, when a projected system is supplied.
    pub projected_residual: Option<f64>,
    /// `max_{i,s} |<R_i, Y_s>_N|`, when a test basis is supplied.
    pub tested_moments: Option<f64>,
}

/// Compute residual diagnostics. Projected entries are filled only when
/// the test basis values / assembled system are supplied.
pub fn residual_report(
    xi: &HedgeCoefficients,
    a: &SensitivityTensor,
    b: &PrimitiveSensitivities,
    x: &DMatrix<f64>,
    y: Option<&DMatrix<f64>>,
    system: Option<&ProjectedSystem>,
) -> Result<ResidualReport> {
    let dims = validate_problem(a, b, x, y)?;
    if xi.n_instruments() != dims.n_instruments || xi.n_basis() != dims.n_basis {
        return Err(Error::DimensionMismatch {
            axis: "coefficient matrix",
            expected: dims.n_instruments * dims.n_basis,
            actual: xi.n_instruments() * xi.n_basis(),
        });
    }
    let n_paths = dims.n_paths;
    let n = dims.n_primitives;

    // Pathwise residuals R_l = A_l phi_l - b_l.
    let mut per_path_norms = Vec::with_capacity(n_paths);
    let mut full = 0.0;
    let mut residuals = DMatrix::zeros(n_paths, n);
    for l in 0..n_paths {
        let phi = xi.values() * x.row(l).transpose();
        let r = a.path_matrix(l) * phi - b.path_vector(l);
        for i in 0..n {
            residuals[(l, i)] = r[i];
        }
        let nrm2 = r.norm_squared();
        per_path_norms.push(nrm2.sqrt());
        full += nrm2;
    }
    full /= n_paths as f64;

    let tested_moments = y.map(|y| {
        let mut worst: f64 = 0.0;
        for s in 0..y.ncols() {
            for i in 0..n {
                let mut acc = 0.0;
                for l in 0..n_paths {
                    acc += residuals[(l, i)] * y[(l, s)];
                }
                worst = worst.max((acc / n_paths as f64).abs());
            }
        }
        worst
    });

    let projected_residual = match system {
        Some(sys) => {
            let z = sys.index_maps.flatten_coefficients(xi.values())?;
            Some((&sys.b_flat * z - &sys.beta_flat).norm())
        }
        None => None,
    };

    Ok(ResidualReport {
        full_residual: full,
        per_path_norms,
        projected_residual,
        tested_moments,
    })
}

/// Per-path minimum-norm least-squares solutions of `A_l phi_l = b_l`
/// together with the per-path condition estimates, so ill-conditioned
/// paths are identifiable.
pub fn pathwise_oracle_report(
    a: &SensitivityTensor,
    b: &PrimitiveSensitivities,
) -> Result<(HedgeRatioMatrix, Vec<f64>)> {
    if b.n_paths() != a.n_paths() || b.n_primitives() != a.n_primitives() {
        return Err(Error::DimensionMismatch {
            axis: "b dimensions",
            expected: a.n_paths() * a.n_primitives(),
            actual: b.n_paths() * b.n_primitives(),
        });
    }
    let solved: Vec<(DVector<f64>, f64)> = (0..a.n_paths())
        .into_par_iter()
        .map(|l| {
            let al = a.path_matrix(l);
            let bl = b.path_vector(l);
            let (phi, _, _) = svd_min_norm_solve(&al, &bl, DEFAULT_RCOND)?;
            Ok((phi, condition_estimate(&al)))
        })
        .collect::<Result<_>>()?;
    let m = a.n_instruments();
    let phi = DMatrix::from_fn(a.n_paths(), m, |l, j| solved[l].0[j]);
    let conds = solved.into_iter().map(|(_, c)| c).collect();
    Ok((HedgeRatioMatrix::new(phi)?, conds))
}

/// Per-path minimum-norm least-squares solve of `A_l phi_l = b_l` -- the
/// unreduced baseline.
pub fn pathwise_oracle_solve(
    a: &SensitivityTensor,
    b: &PrimitiveSensitivities,
) -> Result<HedgeRatioMatrix> {
    pathwise_oracle_report(a, b).map(|(phi, _)| phi)
}

/// Empirically project the pathwise hedge-ratio solutions instrument by
/// instrument onto the solution basis: `xi[j][q] = <Phi_j, X_q>_N`.
pub fn regress_pathwise(
    phi: &HedgeRatioMatrix,
    basis: &BasisSet,
) -> Result<HedgeCoefficients> {
    if phi.n_paths() != basis.n_paths() {
        return Err(Error::DimensionMismatch {
            axis: "N (paths of hedge ratios)",
            expected: basis.n_paths(),
            actual: phi.n_paths(),
        });
    }
    let n = basis.n_paths() as f64;
    let xi = phi.values().transpose() * basis.ortho_values() / n;
    HedgeCoefficients::new(xi, basis.basis_id())
}

/// One formulation's fitted coefficients and diagnostics within a
/// comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormulationFit {
    pub name: String,
    /// `m x r`, row per instrument.
    pub coefficients: Vec<Vec<f64>>,
    pub full_residual: f64,
    pub projected_residual: f64,
    pub tested_moments: f64,
    pub condition_estimate: f64,
    pub rank: usize,
}

/// Side-by-side comparison of the empirical-L2 fit, the projected fit,
/// and the regression-after-pathwise baseline on the same data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRecord {
    pub formulations: Vec<FormulationFit>,
}

impl ComparisonRecord {
    pub fn get(&self, name: &str) -> Option<&FormulationFit> {
        self.formulations.iter().find(|f| f.name == name)
    }
}

fn coefficients_rows(xi: &HedgeCoefficients) -> Vec<Vec<f64>> {
    (0..xi.n_instruments())
        .map(|j| (0..xi.n_basis()).map(|q| xi.values()[(j, q)]).collect())
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn fit_entry(
    name: &str,
    xi: &HedgeCoefficients,
    report: Option<&SolveReport>,
    a: &SensitivityTensor,
    b: &PrimitiveSensitivities,
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    system: &ProjectedSystem,
) -> Result<FormulationFit> {
    let res = residual_report(xi, a, b, x, Some(y), Some(system))?;
    Ok(FormulationFit {
        name: name.to_string(),
        coefficients: coefficients_rows(xi),
        full_residual: res.full_residual,
        projected_residual: res.projected_residual.unwrap_or(f64::NAN),
        tested_moments: res.tested_moments.unwrap_or(f64::NAN),
        condition_estimate: report.map_or(f64::NAN, |r| r.condition_estimate),
        rank: report.map_or(0, |r| r.rank),
    })
}

/// Fit all three methods and tabulate coefficients, residuals, and
/// conditioning. `test_basis = None` selects the Galerkin choice `Y = X`.
pub fn compare_formulations(
    a: &SensitivityTensor,
    b: &PrimitiveSensitivities,
    basis: &BasisSet,
    test_basis: Option<&BasisSet>,
    reg: &RegularizationSpec,
    mode: AssemblyMode,
) -> Result<(ComparisonRecord, Vec<(String, HedgeCoefficients)>)> {
    let x = basis.ortho_values();
    let (y, y_id) = match test_basis {
        Some(t) => (t.ortho_values(), t.basis_id().to_string()),
        None => (x, basis.basis_id().to_string()),
    };
    validate_problem(a, b, x, Some(y))?;

    let projected_system = assemble_projected(a, b, x, y, mode, y_id)?;

    let normal = assemble_normal(a, b, x, None, mode)?;
    let (xi_ls, rep_ls) = solve_reduced(Reduced::Normal(&normal), reg, basis.basis_id())?;

    let (xi_proj, rep_proj) =
        solve_reduced(Reduced::Projected(&projected_system), reg, basis.basis_id())?;

    let phi_path = pathwise_oracle_solve(a, b)?;
    let xi_regress = regress_pathwise(&phi_path, basis)?;

    let projected_name = if test_basis.is_some() {
        "petrov-galerkin"
    } else {
        "galerkin"
    };
    let record = ComparisonRecord {
        formulations: vec![
            fit_entry("ls", &xi_ls, Some(&rep_ls), a, b, x, y, &projected_system)?,
            fit_entry(
                projected_name,
                &xi_proj,
                Some(&rep_proj),
                a,
                b,
                x,
                y,
                &projected_system,
            )?,
            fit_entry(
                "regress-pathwise",
                &xi_regress,
                None,
                a,
                b,
                x,
                y,
                &projected_system,
            )?,
        ],
    };
    let fits = vec![
        ("ls".to_string(), xi_ls),
        (projected_name.to_string(), xi_proj),
        ("regress-pathwise".to_string(), xi_regress),
    ];
    Ok((record, fits))
}
