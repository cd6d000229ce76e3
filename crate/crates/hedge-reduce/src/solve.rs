//! Direct, least-squares, and Tikhonov-regularized solution of reduced
//! coefficient systems, with rank and conditioning reports.
//!
//! Dense problems go through a singular-value decomposition, which gives
//! the minimum-norm solution for rank-deficient systems and the condition
//! estimate in one pass. Large empirical-L2 problems can be solved
//! matrix-free by preconditioned conjugate gradients on the normal
//! operator, applying the design matrix and its adjoint per path.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reduce_ls::{
    apply_design, apply_design_adjoint, normal_diagonal, NormalSystem,
};
use crate::reduce_projected::ProjectedSystem;
use crate::tensors::{HedgeCoefficients, PrimitiveSensitivities, SensitivityTensor};

/// Relative singular-value threshold below which directions are treated
/// as numerically null.
pub const DEFAULT_RCOND: f64 = 1e-12;

/// General Tikhonov specification: minimize
/// `||W (C z - d)||^2 + lambda ||L (z - z0)||^2`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RegularizationSpec {
    pub lambda: f64,
    /// Regularization operator; identity when absent.
    pub l_op: Option<DMatrix<f64>>,
    /// Prior coefficient vector; zero when absent.
    pub prior: Option<DVector<f64>>,
    /// Row-weight matrix on the system; identity when absent.
    pub row_weight: Option<DMatrix<f64>>,
}

impl RegularizationSpec {
    pub fn ridge(lambda: f64) -> Self {
        Self {
            lambda,
            ..Default::default()
        }
    }

    fn validate(&self, n_cols: usize) -> Result<()> {
        if !(self.lambda >= 0.0) {
            return Err(Error::Config(format!(
                "lambda must be nonnegative, got {}",
                self.lambda
            )));
        }
        if let Some(l) = &self.l_op {
            if l.ncols() != n_cols {
                return Err(Error::DimensionMismatch {
                    axis: "L columns",
                    expected: n_cols,
                    actual: l.ncols(),
                });
            }
            let svd = l.clone().svd(false, false);
            let smax = svd.singular_values.max();
            let rank = svd
                .singular_values
                .iter()
                .filter(|&&s| s > DEFAULT_RCOND * smax)
                .count();
            if rank < n_cols {
                return Err(Error::Singular(
                    "regularization operator L is rank-deficient".into(),
                ));
            }
        }
        if let Some(z0) = &self.prior {
            if z0.len() != n_cols {
                return Err(Error::DimensionMismatch {
                    axis: "prior length",
                    expected: n_cols,
                    actual: z0.len(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodTag {
    Direct,
    LeastSquares,
    Regularized,
    MatrixFree,
}

/// Outcome of a solve: coefficient vector plus numerical diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub solution: DVector<f64>,
    pub residual_norm: f64,
    pub rank: usize,
    pub condition_estimate: f64,
    pub method: MethodTag,
}

fn check_finite(m: &DMatrix<f64>, v: &DVector<f64>) -> Result<()> {
    crate::tensors::check_finite_matrix(m, "C")?;
    for (i, x) in v.iter().enumerate() {
        if !x.is_finite() {
            return Err(Error::NonFinite {
                location: format!("d[{}]", i),
            });
        }
    }
    Ok(())
}

/// Minimum-norm SVD solve: singular values below `rcond * sigma_max` are
/// treated as zero. Returns (solution, numerical rank, condition estimate
/// of the input matrix).
pub fn svd_min_norm_solve(
    c: &DMatrix<f64>,
    d: &DVector<f64>,
    rcond: f64,
) -> Result<(DVector<f64>, usize, f64)> {
    let svd = c.clone().svd(true, true);
    let u = svd.u.as_ref().expect("svd with u");
    let v_t = svd.v_t.as_ref().expect("svd with v_t");
    let sv = &svd.singular_values;
    let smax = if sv.is_empty() { 0.0 } else { sv.max() };
    let cutoff = rcond * smax;
    let mut z = DVector::zeros(c.ncols());
    let mut rank = 0;
    let mut smin_kept = f64::INFINITY;
    for k in 0..sv.len() {
        let s = sv[k];
        if s > cutoff && s > 0.0 {
            rank += 1;
            smin_kept = smin_kept.min(s);
            let coeff = u.column(k).dot(d) / s;
            z += v_t.row(k).transpose() * coeff;
        }
    }
    let full = sv.len().min(c.ncols()).min(c.nrows());
    let cond = if rank < full || rank < c.ncols() {
        f64::INFINITY
    } else {
        smax / smin_kept
    };
    Ok((z, rank, cond))
}

/// 2-norm condition number estimate: ratio of extreme singular values,
/// infinity for numerically rank-deficient matrices.
pub fn condition_estimate(c: &DMatrix<f64>) -> f64 {
    let sv = c.clone().singular_values();
    let smax = sv.max();
    let smin = sv.min();
    if smax == 0.0 || smin <= DEFAULT_RCOND * smax {
        f64::INFINITY
    } else {
        smax / smin
    }
}

/// Solve `argmin ||W (C z - d)||^2 + lambda ||L (z - z0)||^2`.
///
/// With `lambda = 0` and rank-deficient `C` this returns the minimum-norm
/// least-squares solution.
pub fn solve_least_squares(
    c: &DMatrix<f64>,
    d: &DVector<f64>,
    reg: &RegularizationSpec,
) -> Result<SolveReport> {
    if c.nrows() != d.len() {
        return Err(Error::DimensionMismatch {
            axis: "rhs length",
            expected: c.nrows(),
            actual: d.len(),
        });
    }
    check_finite(c, d)?;
    reg.validate(c.ncols())?;

    let (wc, wd) = match &reg.row_weight {
        Some(w) => {
            if w.ncols() != c.nrows() {
                return Err(Error::DimensionMismatch {
                    axis: "row weight columns",
                    expected: c.nrows(),
                    actual: w.ncols(),
                });
            }
            (w * c, w * d)
        }
        None => (c.clone(), d.clone()),
    };

    let rcond = DEFAULT_RCOND;
    let (z, rank, cond) = if reg.lambda > 0.0 {
        // Stack sqrt(lambda) L under the weighted data matrix.
        let sqrt_l = reg.lambda.sqrt();
        let l = reg
            .l_op
            .clone()
            .unwrap_or_else(|| DMatrix::identity(c.ncols(), c.ncols()));
        let lrows = l.nrows();
        let mut stacked = DMatrix::zeros(wc.nrows() + lrows, c.ncols());
        stacked.view_mut((0, 0), (wc.nrows(), c.ncols())).copy_from(&wc);
        stacked
            .view_mut((wc.nrows(), 0), (lrows, c.ncols()))
            .copy_from(&(&l * sqrt_l));
        let mut rhs = DVector::zeros(wc.nrows() + lrows);
        rhs.rows_mut(0, wc.nrows()).copy_from(&wd);
        if let Some(z0) = &reg.prior {
            rhs.rows_mut(wc.nrows(), lrows).copy_from(&(&l * z0 * sqrt_l));
        }
        let (z, _, _) = svd_min_norm_solve(&stacked, &rhs, rcond)?;
        let (_, rank, cond) = svd_min_norm_solve(&wc, &wd, rcond)?;
        (z, rank, cond)
    } else {
        svd_min_norm_solve(&wc, &wd, rcond)?
    };

    let residual_norm = (&wc * &z - &wd).norm();
    let method = if reg.lambda > 0.0 {
        MethodTag::Regularized
    } else if wc.nrows() == wc.ncols() && rank == wc.ncols() {
        MethodTag::Direct
    } else {
        MethodTag::LeastSquares
    };
    Ok(SolveReport {
        solution: z,
        residual_norm,
        rank,
        condition_estimate: cond,
        method,
    })
}

/// A reduced coefficient system ready for solution.
pub enum Reduced<'a> {
    Normal(&'a NormalSystem),
    Projected(&'a ProjectedSystem),
}

/// Solve a reduced system and unflatten the coefficient vector.
///
/// Normal systems are solved through `(G + lambda L^T L) z = h + lambda
/// L^T L z0`; projected systems directly when square and nonsingular,
/// otherwise as (regularized) least squares on the flattened residual.
/// A singular square projected system without regularization is an error
/// pointing at `lambda > 0` or an explicit least-squares solve.
pub fn solve_reduced(
    system: Reduced<'_>,
    reg: &RegularizationSpec,
    basis_id: &str,
) -> Result<(HedgeCoefficients, SolveReport)> {
    let (report, maps) = match system {
        Reduced::Normal(sys) => {
            reg.validate(sys.g_flat.ncols())?;
            let dim = sys.g_flat.ncols();
            let (k, rhs) = if reg.lambda > 0.0 {
                let ltl = match &reg.l_op {
                    Some(l) => l.transpose() * l,
                    None => DMatrix::identity(dim, dim),
                };
                let mut rhs = sys.h_flat.clone();
                if let Some(z0) = &reg.prior {
                    rhs += &ltl * z0 * reg.lambda;
                }
                (&sys.g_flat + &ltl * reg.lambda, rhs)
            } else {
                (sys.g_flat.clone(), sys.h_flat.clone())
            };
            let (z, rank, cond) = svd_min_norm_solve(&k, &rhs, DEFAULT_RCOND)?;
            let residual_norm = (&sys.g_flat * &z - &sys.h_flat).norm();
            let method = if reg.lambda > 0.0 {
                MethodTag::Regularized
            } else if rank == dim {
                MethodTag::Direct
            } else {
                MethodTag::LeastSquares
            };
            (
                SolveReport {
                    solution: z,
                    residual_norm,
                    rank,
                    condition_estimate: cond,
                    method,
                },
                sys.index_maps,
            )
        }
        Reduced::Projected(sys) => {
            let square = sys.b_flat.nrows() == sys.b_flat.ncols();
            let report = if square && reg.lambda == 0.0 {
                let cond = condition_estimate(&sys.b_flat);
                if cond.is_finite() {
                    let (z, rank, _) =
                        svd_min_norm_solve(&sys.b_flat, &sys.beta_flat, DEFAULT_RCOND)?;
                    let residual_norm = (&sys.b_flat * &z - &sys.beta_flat).norm();
                    SolveReport {
                        solution: z,
                        residual_norm,
                        rank,
                        condition_estimate: cond,
                        method: MethodTag::Direct,
                    }
                } else {
                    return Err(Error::Singular(
                        "square projected system is numerically singular; \
                         use lambda > 0 or solve_least_squares"
                            .into(),
                    ));
                }
            } else {
                solve_least_squares(&sys.b_flat, &sys.beta_flat, reg)?
            };
            (report, sys.index_maps)
        }
    };
    let xi = maps.unflatten_coefficients(&report.solution)?;
    Ok((HedgeCoefficients::new(xi, basis_id)?, report))
}

/// Matrix-free solve of the empirical-L2 problem by preconditioned
/// conjugate gradients on `(D^T D / N + lambda L^T L) z = D^T y / N +
/// lambda L^T L z0`, with the diagonal of the normal matrix as
/// preconditioner.
pub fn solve_normal_matrix_free(
    a: &SensitivityTensor,
    b: &PrimitiveSensitivities,
    x: &DMatrix<f64>,
    reg: &RegularizationSpec,
    basis_id: &str,
) -> Result<(HedgeCoefficients, SolveReport)> {
    let dims = crate::tensors::validate_problem(a, b, x, None)?;
    let dim = dims.n_instruments * dims.n_basis;
    reg.validate(dim)?;
    let maps = crate::tensors::FlatIndexMaps::new(
        dims.n_primitives,
        dims.n_basis,
        dims.n_instruments,
        dims.n_basis,
    );
    let n_paths = dims.n_paths as f64;

    let ltl = match (&reg.l_op, reg.lambda > 0.0) {
        (Some(l), true) => Some(l.transpose() * l),
        (None, true) => None, // identity scaling handled inline
        _ => None,
    };
    let apply_op = |z: &DVector<f64>| -> Result<DVector<f64>> {
        let dz = apply_design(z, a, x)?;
        let mut out = apply_design_adjoint(&dz, a, x)? / n_paths;
        if reg.lambda > 0.0 {
            match &ltl {
                Some(ltl) => out += ltl * z * reg.lambda,
                None => out += z * reg.lambda,
            }
        }
        Ok(out)
    };

    // rhs = D^T y / N (+ lambda L^T L z0)
    let y = DVector::from_fn(a.n_paths() * dims.n_primitives, |k, _| {
        b.get(k / dims.n_primitives, k % dims.n_primitives)
    });
    let mut rhs = apply_design_adjoint(&y, a, x)? / n_paths;
    if reg.lambda > 0.0 {
        if let Some(z0) = &reg.prior {
            match &ltl {
                Some(ltl) => rhs += ltl * z0 * reg.lambda,
                None => rhs += z0 * reg.lambda,
            }
        }
    }

    let mut precond = normal_diagonal(a, x)?;
    for v in precond.iter_mut() {
        *v += reg.lambda;
        if *v <= 0.0 {
            *v = 1.0;
        }
    }

    let mut z = DVector::zeros(dim);
    let mut r = rhs.clone();
    let mut s = r.component_div(&precond);
    let mut p = s.clone();
    let mut rs = r.dot(&s);
    let rhs_norm = rhs.norm().max(f64::MIN_POSITIVE);
    let tol = 1e-13 * rhs_norm;
    let max_iter = 100 * dim + 200;
    let mut iter = 0;
    while r.norm() > tol {
        if iter >= max_iter {
            return Err(Error::NonConvergence(format!(
                "conjugate gradients: residual {:.3e} after {} iterations",
                r.norm(),
                iter
            )));
        }
        let kp = apply_op(&p)?;
        let denom = p.dot(&kp);
        if denom <= 0.0 {
            // Null-space direction: the preconditioned residual has
            // converged as far as the operator allows.
            break;
        }
        let alpha = rs / denom;
        z += &p * alpha;
        r -= kp * alpha;
        s = r.component_div(&precond);
        let rs_new = r.dot(&s);
        p = &s + &p * (rs_new / rs);
        rs = rs_new;
        iter += 1;
    }

    let dz = apply_design(&z, a, x)?;
    let residual_norm = ((dz - y).norm_squared() / n_paths).sqrt();
    let xi = maps.unflatten_coefficients(&z)?;
    Ok((
        HedgeCoefficients::new(xi, basis_id)?,
        SolveReport {
            solution: z,
            residual_norm,
            rank: dim,
            condition_estimate: f64::NAN,
            method: MethodTag::MatrixFree,
        },
    ))
}
