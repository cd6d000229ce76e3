//! Experiment pipeline: simulate, differentiate, build bases, assemble,
//! solve, diagnose, and reconstruct -- plus tensor export/import for
//! solver-only reruns and out-of-sample application of stored results.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use nalgebra::DMatrix;

use crate::basis::{apply_basis, basis_content_id, build_basis};
use crate::diagnostics::{
    compare_formulations, pathwise_oracle_solve, regress_pathwise, residual_report,
    ComparisonRecord,
};
use crate::error::{Error, Result};
use crate::models::{
    hedge_instrument_sensitivities, primitive_sensitivities, KinkReport,
};
use crate::reduce_ls::{assemble_normal, AssemblyMode};
use crate::reduce_projected::{assemble_projected, ProjectedSystem};
use crate::solve::{
    solve_normal_matrix_free, solve_reduced, Reduced, RegularizationSpec, SolveReport,
};
use crate::states::StateTable;
use crate::tensors::{
    read_tensor_file, reconstruct_hedge, write_tensor_file, HedgeCoefficients,
    HedgeRatioMatrix, PrimitiveSensitivities, SensitivityTensor,
};

use super::config::{ExperimentConfig, Formulation};
use super::result::{
    matrix_rows, FitRecord, ResidualSummary, ResultFile, RunMetadata, SolveSummary,
    StoredBasis, RESULT_VERSION,
};

/// Simulated and differentiated problem data for one seed.
struct ProblemData {
    states: StateTable,
    a: SensitivityTensor,
    b: PrimitiveSensitivities,
    kinks: KinkReport,
}

fn build_problem(config: &ExperimentConfig, seed: u64) -> Result<ProblemData> {
    let mut model = config.model.clone();
    model.seed = seed;
    let states = model.simulate()?;
    let primitives = config.parsed_primitives()?;
    let (b, kinks) = primitive_sensitivities(&states, &config.product.spec, &primitives)?;
    let a = hedge_instrument_sensitivities(model.n_paths, &primitives, &config.instruments)?;
    Ok(ProblemData { states, a, b, kinks })
}

fn assembly_mode(config: &ExperimentConfig) -> AssemblyMode {
    if config.deterministic {
        AssemblyMode::Sequential
    } else {
        AssemblyMode::Blocked {
            block_size: config.block_size,
        }
    }
}

/// Empirical-L2 fit: explicit normal equations for small coefficient
/// counts, matrix-free conjugate gradients above the cutover.
fn solve_ls(
    a: &SensitivityTensor,
    b: &PrimitiveSensitivities,
    x: &DMatrix<f64>,
    basis_id: &str,
    reg: &RegularizationSpec,
    mode: AssemblyMode,
    cutover: usize,
) -> Result<(HedgeCoefficients, SolveReport)> {
    let dim = a.n_instruments() * x.ncols();
    if dim <= cutover {
        let normal = assemble_normal(a, b, x, None, mode)?;
        solve_reduced(Reduced::Normal(&normal), reg, basis_id)
    } else {
        solve_normal_matrix_free(a, b, x, reg, basis_id)
    }
}

struct FitContext<'a> {
    data: &'a ProblemData,
    x: &'a DMatrix<f64>,
    y: &'a DMatrix<f64>,
    projected: &'a ProjectedSystem,
    held_out: Option<&'a HeldOut>,
}

/// Fresh-seed sample used for held-out residuals during lambda sweeps.
struct HeldOut {
    a: SensitivityTensor,
    b: PrimitiveSensitivities,
    x: DMatrix<f64>,
}

fn fit_record(
    name: &str,
    lambda: f64,
    xi: &HedgeCoefficients,
    report: &SolveReport,
    ctx: &FitContext<'_>,
) -> Result<FitRecord> {
    let res = residual_report(
        xi,
        &ctx.data.a,
        &ctx.data.b,
        ctx.x,
        Some(ctx.y),
        Some(ctx.projected),
    )?;
    let held_out_full_residual = match ctx.held_out {
        Some(h) => {
            Some(residual_report(xi, &h.a, &h.b, &h.x, None, None)?.full_residual)
        }
        None => None,
    };
    Ok(FitRecord {
        formulation: name.to_string(),
        lambda,
        coefficients: matrix_rows(xi.values()),
        held_out_full_residual,
        solve: SolveSummary::from(report),
        residuals: ResidualSummary {
            full_residual: res.full_residual,
            projected_residual: res.projected_residual,
            tested_moments: res.tested_moments,
        },
    })
}

fn per_path_csv(
    path: &Path,
    xi: &HedgeCoefficients,
    data: &ProblemData,
    x: &DMatrix<f64>,
) -> Result<()> {
    let res = residual_report(xi, &data.a, &data.b, x, None, None)?;
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "path,residual_norm")?;
    for (l, r) in res.per_path_norms.iter().enumerate() {
        writeln!(out, "{},{:e}", l, r)?;
    }
    out.flush()?;
    Ok(())
}

/// Run the full pipeline for a config and produce the result record.
/// Writes the optional per-path residual CSV as a side effect; saving the
/// result file itself is the caller's concern.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ResultFile> {
    config.validate()?;
    let started = Instant::now();
    let mode = assembly_mode(config);

    let data = build_problem(config, config.model.seed)?;
    let basis = build_basis(&config.solution_basis, &data.states, config.drop_tol)?;
    let test_basis = config
        .test_basis
        .as_ref()
        .map(|t| build_basis(t, &data.states, config.drop_tol))
        .transpose()?;

    let x = basis.ortho_values();
    let (y, y_id, projected_name) = match &test_basis {
        Some(t) => (t.ortho_values(), t.basis_id().to_string(), "petrov-galerkin"),
        None => (x, basis.basis_id().to_string(), "galerkin"),
    };
    let projected = assemble_projected(&data.a, &data.b, x, y, mode, y_id)?;

    // Held-out sample for lambda selection: same model, fresh seed, with
    // the stored basis transform re-applied to the new states.
    let held_out = match config.regularization.lambda_grid {
        Some(_) => {
            let fresh = build_problem(config, config.model.seed.wrapping_add(1))?;
            let x_h = apply_basis(&config.solution_basis, basis.transform(), &fresh.states)?;
            Some(HeldOut {
                a: fresh.a,
                b: fresh.b,
                x: x_h,
            })
        }
        None => None,
    };

    let ctx = FitContext {
        data: &data,
        x,
        y,
        projected: &projected,
        held_out: held_out.as_ref(),
    };

    let mut fits = Vec::new();
    let mut comparison: Option<ComparisonRecord> = None;
    let mut first_xi: Option<HedgeCoefficients> = None;

    for lambda in config.lambdas() {
        let reg = config.regularization_spec(lambda);
        let want_ls = matches!(
            config.formulation,
            Formulation::Ls | Formulation::Both | Formulation::Compare
        );
        let want_projected = matches!(
            config.formulation,
            Formulation::Projected | Formulation::Both | Formulation::Compare
        );
        if want_ls {
            let (xi, report) = solve_ls(
                &data.a,
                &data.b,
                x,
                basis.basis_id(),
                &reg,
                mode,
                config.matrix_free_cutover,
            )?;
            fits.push(fit_record("ls", lambda, &xi, &report, &ctx)?);
            first_xi.get_or_insert(xi);
        }
        if want_projected {
            let (xi, report) = solve_reduced(Reduced::Projected(&projected), &reg, basis.basis_id())?;
            fits.push(fit_record(projected_name, lambda, &xi, &report, &ctx)?);
            first_xi.get_or_insert(xi);
        }
        if config.formulation == Formulation::Compare && comparison.is_none() {
            let (record, _) = compare_formulations(
                &data.a,
                &data.b,
                &basis,
                test_basis.as_ref(),
                &reg,
                mode,
            )?;
            comparison = Some(record);
        }
    }

    if let (Some(path), Some(xi)) = (&config.output.per_path_csv, &first_xi) {
        per_path_csv(path, xi, &data, x)?;
    }

    Ok(ResultFile {
        version: RESULT_VERSION,
        config: config.clone(),
        basis: StoredBasis {
            spec: basis.spec().cloned(),
            transform: matrix_rows(basis.transform()),
            basis_id: basis.basis_id().to_string(),
            dropped_columns: basis.report().dropped.clone(),
        },
        fits,
        comparison,
        metadata: RunMetadata {
            n_paths: config.model.n_paths,
            runtime_ms: if config.deterministic {
                None
            } else {
                Some(started.elapsed().as_millis() as u64)
            },
            kink_path_count: data.kinks.paths.len(),
        },
    })
}

/// Evaluate a stored fit on (possibly new) states: stored raw features
/// through the stored transform, then coefficient reconstruction.
pub fn apply_result(
    result: &ResultFile,
    states: &StateTable,
    formulation: Option<&str>,
) -> Result<HedgeRatioMatrix> {
    if result.version != RESULT_VERSION {
        return Err(Error::CorruptFile(format!(
            "result version {} (expected {})",
            result.version, RESULT_VERSION
        )));
    }
    let fit = result.fit(formulation)?;
    let spec = result.basis.spec.as_ref().ok_or_else(|| {
        Error::Config("result basis stores no feature spec; cannot re-evaluate on states".into())
    })?;
    let x = apply_basis(spec, &result.basis.transform_matrix(), states)?;
    let m = fit.coefficients.len();
    let r = fit.coefficients.first().map_or(0, |row| row.len());
    let xi = HedgeCoefficients::new(
        DMatrix::from_fn(m, r, |j, q| fit.coefficients[j][q]),
        &result.basis.basis_id,
    )?;
    reconstruct_hedge(&xi, &x, &result.basis.basis_id)
}

/// File names used by tensor export/import.
pub const TENSOR_A: &str = "A.hrtens";
pub const TENSOR_B: &str = "b.hrtens";
pub const TENSOR_X: &str = "X.hrtens";
pub const TENSOR_Y: &str = "Y.hrtens";
pub const STATES_CSV: &str = "states.csv";

fn write_matrix_as_tensor(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut values = Vec::with_capacity(m.nrows() * m.ncols());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            values.push(m[(r, c)]);
        }
    }
    write_tensor_file(path, [m.nrows() as u64, m.ncols() as u64, 1], &values)
}

fn read_matrix_from_tensor(path: &Path) -> Result<DMatrix<f64>> {
    let (dims, values) = read_tensor_file(path)?;
    if dims[2] != 1 {
        return Err(Error::CorruptFile(format!(
            "{}: expected a matrix (third dim 1), got {}",
            path.display(),
            dims[2]
        )));
    }
    let (rows, cols) = (dims[0] as usize, dims[1] as usize);
    Ok(DMatrix::from_fn(rows, cols, |r, c| values[r * cols + c]))
}

/// Export the generated problem data (A, b, solution/test basis values,
/// states) into a directory for solver-only reruns.
pub fn export_tensors(config: &ExperimentConfig, dir: &Path) -> Result<()> {
    config.validate()?;
    std::fs::create_dir_all(dir)?;
    let data = build_problem(config, config.model.seed)?;
    let basis = build_basis(&config.solution_basis, &data.states, config.drop_tol)?;

    write_tensor_file(
        &dir.join(TENSOR_A),
        [
            data.a.n_paths() as u64,
            data.a.n_primitives() as u64,
            data.a.n_instruments() as u64,
        ],
        data.a.as_slice(),
    )?;
    write_matrix_as_tensor(&dir.join(TENSOR_B), data.b.values())?;
    write_matrix_as_tensor(&dir.join(TENSOR_X), basis.ortho_values())?;
    if let Some(t) = &config.test_basis {
        let test = build_basis(t, &data.states, config.drop_tol)?;
        write_matrix_as_tensor(&dir.join(TENSOR_Y), test.ortho_values())?;
    }
    data.states.write_csv_file(&dir.join(STATES_CSV))?;
    Ok(())
}

/// Solver-only rerun: load exported tensors and run assembly + solve
/// without re-simulating. Reproduces the original coefficients exactly,
/// because they are a pure function of (A, b, X, Y).
pub fn run_from_tensors(config: &ExperimentConfig, dir: &Path) -> Result<ResultFile> {
    config.validate()?;
    let started = Instant::now();
    let mode = assembly_mode(config);

    let (dims, values) = read_tensor_file(&dir.join(TENSOR_A))?;
    let a = SensitivityTensor::new(
        values,
        dims[0] as usize,
        dims[1] as usize,
        dims[2] as usize,
    )?;
    if a.n_paths() != config.model.n_paths {
        return Err(Error::DimensionMismatch {
            axis: "N (paths of imported A vs config)",
            expected: config.model.n_paths,
            actual: a.n_paths(),
        });
    }
    let b = PrimitiveSensitivities::new(read_matrix_from_tensor(&dir.join(TENSOR_B))?)?;
    let x = read_matrix_from_tensor(&dir.join(TENSOR_X))?;
    let y_path = dir.join(TENSOR_Y);
    let y_loaded = if y_path.exists() {
        Some(read_matrix_from_tensor(&y_path)?)
    } else {
        None
    };
    // Content id of the imported basis values; there is no feature spec.
    let basis_id = basis_content_id(None, &x);

    let (y, y_id, projected_name) = match &y_loaded {
        Some(y) => (y, basis_content_id(None, y), "petrov-galerkin"),
        None => (&x, basis_id.clone(), "galerkin"),
    };
    let projected = assemble_projected(&a, &b, &x, y, mode, y_id)?;

    let mut fits = Vec::new();
    for lambda in config.lambdas() {
        let reg = config.regularization_spec(lambda);
        let want_ls = matches!(
            config.formulation,
            Formulation::Ls | Formulation::Both | Formulation::Compare
        );
        let want_projected = matches!(
            config.formulation,
            Formulation::Projected | Formulation::Both | Formulation::Compare
        );
        let push = |name: &str,
                        xi: HedgeCoefficients,
                        report: SolveReport,
                        fits: &mut Vec<FitRecord>|
         -> Result<()> {
            let res = residual_report(&xi, &a, &b, &x, Some(y), Some(&projected))?;
            fits.push(FitRecord {
                formulation: name.to_string(),
                lambda,
                coefficients: matrix_rows(xi.values()),
                held_out_full_residual: None,
                solve: SolveSummary::from(&report),
                residuals: ResidualSummary {
                    full_residual: res.full_residual,
                    projected_residual: res.projected_residual,
                    tested_moments: res.tested_moments,
                },
            });
            Ok(())
        };
        if want_ls {
            let (xi, report) = solve_ls(
                &a,
                &b,
                &x,
                &basis_id,
                &reg,
                mode,
                config.matrix_free_cutover,
            )?;
            push("ls", xi, report, &mut fits)?;
        }
        if want_projected {
            let (xi, report) = solve_reduced(Reduced::Projected(&projected), &reg, &basis_id)?;
            push(projected_name, xi, report, &mut fits)?;
        }
        if config.formulation == Formulation::Compare {
            let phi = pathwise_oracle_solve(&a, &b)?;
            let ortho = crate::basis::orthonormalize(&x, config.drop_tol)?;
            let xi = regress_pathwise(&phi, &ortho)?;
            let xi = HedgeCoefficients::new(xi.values().clone(), &basis_id)?;
            let report = SolveReport {
                solution: projected.index_maps.flatten_coefficients(xi.values())?,
                residual_norm: f64::NAN,
                rank: 0,
                condition_estimate: f64::NAN,
                method: crate::solve::MethodTag::LeastSquares,
            };
            push("regress-pathwise", xi, report, &mut fits)?;
        }
    }

    Ok(ResultFile {
        version: RESULT_VERSION,
        config: config.clone(),
        basis: StoredBasis {
            spec: None,
            transform: matrix_rows(&DMatrix::identity(x.ncols(), x.ncols())),
            basis_id,
            dropped_columns: Vec::new(),
        },
        fits,
        comparison: None,
        metadata: RunMetadata {
            n_paths: a.n_paths(),
            runtime_ms: if config.deterministic {
                None
            } else {
                Some(started.elapsed().as_millis() as u64)
            },
            kink_path_count: 0,
        },
    })
}

/// Write a hedge-ratio matrix as CSV with one column per instrument.
pub fn write_hedge_csv<W: Write>(out: &mut W, phi: &HedgeRatioMatrix) -> Result<()> {
    let header: Vec<String> = (1..=phi.n_instruments())
        .map(|j| format!("phi_{}", j))
        .collect();
    writeln!(out, "{}", header.join(","))?;
    for l in 0..phi.n_paths() {
        let row: Vec<String> = (0..phi.n_instruments())
            .map(|j| format!("{:e}", phi.get(l, j)))
            .collect();
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}
