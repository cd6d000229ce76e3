//! Empirical-L2 coefficient problem: normal-equation assembly `G z = h`,
//! matrix-free design-matrix application, and the pathwise least-squares
//! objective.
//!
//! Accumulation streams one path at a time. Partial sums are formed over
//! fixed path blocks and merged pairwise in block order, so the result is
//! independent of the number of worker threads; a strict sequential mode
//! avoids blocking altogether.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensors::{
    validate_problem, FlatIndexMaps, HedgeCoefficients, PrimitiveSensitivities, SensitivityTensor,
};

/// Residual weights `W_l` acting on primitive-sensitivity space.
#[derive(Debug, Clone, PartialEq)]
pub enum ResidualWeights {
    /// One `n x n` weight shared by all paths.
    Shared(DMatrix<f64>),
    /// A separate `n x n` weight per path.
    PerPath(Vec<DMatrix<f64>>),
}

impl ResidualWeights {
    fn validate(&self, n_paths: usize, n_primitives: usize) -> Result<()> {
        let check = |w: &DMatrix<f64>| -> Result<()> {
            if w.nrows() != n_primitives || w.ncols() != n_primitives {
                return Err(Error::DimensionMismatch {
                    axis: "residual weight",
                    expected: n_primitives,
                    actual: w.nrows(),
                });
            }
            crate::tensors::check_finite_matrix(w, "W")
        };
        match self {
            ResidualWeights::Shared(w) => check(w),
            ResidualWeights::PerPath(ws) => {
                if ws.len() != n_paths {
                    return Err(Error::DimensionMismatch {
                        axis: "per-path weight count",
                        expected: n_paths,
                        actual: ws.len(),
                    });
                }
                ws.iter().try_for_each(check)
            }
        }
    }

    fn for_path(&self, l: usize) -> &DMatrix<f64> {
        match self {
            ResidualWeights::Shared(w) => w,
            ResidualWeights::PerPath(ws) => &ws[l],
        }
    }

    pub fn tag(&self) -> String {
        match self {
            ResidualWeights::Shared(_) => "shared".into(),
            ResidualWeights::PerPath(_) => "per-path".into(),
        }
    }
}

/// How path sums are accumulated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AssemblyMode {
    /// Parallel over fixed-size path blocks; block partials are merged
    /// pairwise in block order, so results do not depend on thread count.
    Blocked { block_size: usize },
    /// Strict path-by-path accumulation on one thread.
    Sequential,
}

impl Default for AssemblyMode {
    fn default() -> Self {
        AssemblyMode::Blocked { block_size: 1024 }
    }
}

/// Flattened normal equations `G_flat z = h_flat` for the empirical-L2
/// criterion.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalSystem {
    pub g_flat: DMatrix<f64>,
    pub h_flat: DVector<f64>,
    pub index_maps: FlatIndexMaps,
    pub weight_tag: String,
}

fn block_ranges(n: usize, block: usize) -> Vec<std::ops::Range<usize>> {
    (0..n).step_by(block.max(1)).map(|s| s..(s + block).min(n)).collect()
}

/// Pairwise merge of block partials in fixed order.
fn tree_merge<T, F: Fn(T, T) -> T>(mut items: Vec<T>, merge: &F) -> T {
    while items.len() > 1 {
        let mut next = Vec::with_capacity(items.len().div_ceil(2));
        let mut iter = items.into_iter();
        while let Some(a) = iter.next() {
            match iter.next() {
                Some(b) => next.push(merge(a, b)),
                None => next.push(a),
            }
        }
        items = next;
    }
    items.into_iter().next().expect("non-empty partials")
}

fn accumulate_normal_block(
    range: std::ops::Range<usize>,
    a: &SensitivityTensor,
    b: &PrimitiveSensitivities,
    x: &nalgebra::DMatrix<f64>,
    w: Option<&ResidualWeights>,
    maps: &FlatIndexMaps,
) -> (DMatrix<f64>, DVector<f64>) {
    let (m, r) = (maps.n_instruments, maps.n_basis);
    let mut g = DMatrix::zeros(m * r, m * r);
    let mut h = DVector::zeros(m * r);
    for l in range {
        let al = a.path_matrix(l);
        let bl = b.path_vector(l);
        let (wa, wb) = match w {
            Some(w) => {
                let wl = w.for_path(l);
                (wl * &al, wl * &bl)
            }
            None => (al, bl),
        };
        // M = (WA)^T (WA), u = (WA)^T (Wb); basis factors are rank-1 in (q,p).
        let m_mat = wa.transpose() * &wa;
        let u = wa.transpose() * &wb;
        for q in 0..r {
            let xq = x[(l, q)];
            if xq == 0.0 {
                continue;
            }
            for p in 0..r {
                let w_qp = xq * x[(l, p)];
                if w_qp == 0.0 {
                    continue;
                }
                for j in 0..m {
                    let row = maps.col(j, q);
                    for k in 0..m {
                        g[(row, maps.col(k, p))] += m_mat[(j, k)] * w_qp;
                    }
                }
            }
            for j in 0..m {
                h[maps.col(j, q)] += u[j] * xq;
            }
        }
    }
    (g, h)
}

/// Assemble the flattened normal equations
/// `G[(j,q),(k,p)] = (1/N) sum_l sum_i (WA)[l,i,j] (WA)[l,i,k] X[l,q] X[l,p]`,
/// `h[(j,q)] = (1/N) sum_l sum_i (WA)[l,i,j] (Wb)[l,i] X[l,q]`.
pub fn assemble_normal(
    a: &SensitivityTensor,
    b: &PrimitiveSensitivities,
    x: &DMatrix<f64>,
    w: Option<&ResidualWeights>,
    mode: AssemblyMode,
) -> Result<NormalSystem> {
    let dims = validate_problem(a, b, x, None)?;
    if let Some(w) = w {
        w.validate(dims.n_paths, dims.n_primitives)?;
    }
    let maps = FlatIndexMaps::new(dims.n_primitives, dims.n_basis, dims.n_instruments, dims.n_basis);
    let n = dims.n_paths;

    let (mut g, mut h) = match mode {
        AssemblyMode::Sequential => accumulate_normal_block(0..n, a, b, x, w, &maps),
        AssemblyMode::Blocked { block_size } => {
            let partials: Vec<_> = block_ranges(n, block_size)
                .into_par_iter()
                .map(|range| accumulate_normal_block(range, a, b, x, w, &maps))
                .collect();
            tree_merge(partials, &|(ga, ha), (gb, hb)| (ga + gb, ha + hb))
        }
    };
    let scale = 1.0 / n as f64;
    g *= scale;
    h *= scale;

    for v in g.iter().chain(h.iter()) {
        if !v.is_finite() {
            return Err(Error::NonFinite {
                location: "normal-equation accumulation".into(),
            });
        }
    }

    Ok(NormalSystem {
        g_flat: g,
        h_flat: h,
        index_maps: maps,
        weight_tag: w.map_or_else(|| "identity".into(), |w| w.tag()),
    })
}

fn design_dims(a: &SensitivityTensor, x: &DMatrix<f64>) -> Result<FlatIndexMaps> {
    if x.nrows() != a.n_paths() {
        return Err(Error::DimensionMismatch {
            axis: "N (paths of X)",
            expected: a.n_paths(),
            actual: x.nrows(),
        });
    }
    Ok(FlatIndexMaps::new(
        a.n_primitives(),
        x.ncols(),
        a.n_instruments(),
        x.ncols(),
    ))
}

/// Apply the design matrix `D[(l,i),(j,q)] = A[l,i,j] X[l,q]` to a flat
/// coefficient vector without materializing `D`. Output rows are ordered
/// path-major: `(l, i) -> l*n + i`.
pub fn apply_design(
    z: &DVector<f64>,
    a: &SensitivityTensor,
    x: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    let maps = design_dims(a, x)?;
    if z.len() != maps.n_cols() {
        return Err(Error::DimensionMismatch {
            axis: "coefficient vector",
            expected: maps.n_cols(),
            actual: z.len(),
        });
    }
    let xi = maps.unflatten_coefficients(z)?;
    let n = a.n_primitives();
    let mut out = DVector::zeros(a.n_paths() * n);
    for l in 0..a.n_paths() {
        // phi_l = xi * x_l, then A_l phi_l.
        let xl = x.row(l).transpose();
        let phi = &xi * xl;
        let al = a.path_matrix(l);
        let res = al * phi;
        for i in 0..n {
            out[l * n + i] = res[i];
        }
    }
    Ok(out)
}

/// Adjoint action `D^T v` of the design matrix, matrix-free.
pub fn apply_design_adjoint(
    v: &DVector<f64>,
    a: &SensitivityTensor,
    x: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    let maps = design_dims(a, x)?;
    let n = a.n_primitives();
    if v.len() != a.n_paths() * n {
        return Err(Error::DimensionMismatch {
            axis: "design-row vector",
            expected: a.n_paths() * n,
            actual: v.len(),
        });
    }
    let (m, r) = (maps.n_instruments, maps.n_basis);
    let mut out = DVector::zeros(m * r);
    for l in 0..a.n_paths() {
        let al = a.path_matrix(l);
        let vl = DVector::from_fn(n, |i, _| v[l * n + i]);
        let atv = al.transpose() * vl;
        for q in 0..r {
            let xq = x[(l, q)];
            if xq == 0.0 {
                continue;
            }
            for j in 0..m {
                out[maps.col(j, q)] += atv[j] * xq;
            }
        }
    }
    Ok(out)
}

/// Diagonal of `G = D^T D / N`, streamed; used as a preconditioner by the
/// matrix-free solver.
pub fn normal_diagonal(a: &SensitivityTensor, x: &DMatrix<f64>) -> Result<DVector<f64>> {
    let maps = design_dims(a, x)?;
    let (n, m, r) = (a.n_primitives(), maps.n_instruments, maps.n_basis);
    let mut diag = DVector::zeros(m * r);
    for l in 0..a.n_paths() {
        for j in 0..m {
            let mut col_sq = 0.0;
            for i in 0..n {
                let v = a.get(l, i, j);
                col_sq += v * v;
            }
            for q in 0..r {
                let xq = x[(l, q)];
                diag[maps.col(j, q)] += col_sq * xq * xq;
            }
        }
    }
    diag /= a.n_paths() as f64;
    Ok(diag)
}

/// Pathwise weighted least-squares objective
/// `(1/N) sum_l || W_l (A_l phi_l^r - b_l) ||_2^2` at the given
/// coefficients.
pub fn ls_objective(
    xi: &HedgeCoefficients,
    a: &SensitivityTensor,
    b: &PrimitiveSensitivities,
    x: &DMatrix<f64>,
    w: Option<&ResidualWeights>,
) -> Result<f64> {
    let dims = validate_problem(a, b, x, None)?;
    if xi.n_instruments() != dims.n_instruments || xi.n_basis() != dims.n_basis {
        return Err(Error::DimensionMismatch {
            axis: "coefficient matrix",
            expected: dims.n_instruments * dims.n_basis,
            actual: xi.n_instruments() * xi.n_basis(),
        });
    }
    if let Some(w) = w {
        w.validate(dims.n_paths, dims.n_primitives)?;
    }
    let mut acc = 0.0;
    for l in 0..dims.n_paths {
        let xl = x.row(l).transpose();
        let phi = xi.values() * xl;
        let res = a.path_matrix(l) * phi - b.path_vector(l);
        let res = match w {
            Some(w) => w.for_path(l) * res,
            None => res,
        };
        acc += res.norm_squared();
    }
    Ok(acc / dims.n_paths as f64)
}
