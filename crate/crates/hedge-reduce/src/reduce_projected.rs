//! Projected (Galerkin / Petrov-Galerkin) moment system: assembly of the
//! flattened `B z = beta` equations by streamed rank-1 updates over paths.
//!
//! The assembly is identical for raw (non-orthonormal) solution bases;
//! no Gram matrix enters the moment equations.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::reduce_ls::AssemblyMode;
use crate::tensors::{
    validate_problem, FlatIndexMaps, PrimitiveSensitivities, SensitivityTensor,
};

/// Flattened projected system `B_flat z = beta_flat` with rows indexed by
/// (primitive, test index) and columns by (instrument, basis index).
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedSystem {
    pub b_flat: DMatrix<f64>,
    pub beta_flat: DVector<f64>,
    pub index_maps: FlatIndexMaps,
    pub test_basis_id: String,
}

fn accumulate_projected_block(
    range: std::ops::Range<usize>,
    a: &SensitivityTensor,
    b: &PrimitiveSensitivities,
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    maps: &FlatIndexMaps,
) -> (DMatrix<f64>, DVector<f64>) {
    let (n, p, m, r) = (
        maps.n_primitives,
        maps.n_test,
        maps.n_instruments,
        maps.n_basis,
    );
    let mut bm = DMatrix::zeros(n * p, m * r);
    let mut beta = DVector::zeros(n * p);
    for l in range {
        for s in 0..p {
            let ys = y[(l, s)];
            if ys == 0.0 {
                continue;
            }
            for i in 0..n {
                let row = maps.row(i, s);
                beta[row] += b.get(l, i) * ys;
                for q in 0..r {
                    let w = ys * x[(l, q)];
                    if w == 0.0 {
                        continue;
                    }
                    for j in 0..m {
                        bm[(row, maps.col(j, q))] += a.get(l, i, j) * w;
                    }
                }
            }
        }
    }
    (bm, beta)
}

/// Assemble `B[(i,s),(j,q)] = (1/N) sum_l A[l,i,j] X[l,q] Y[l,s]` and
/// `beta[(i,s)] = (1/N) sum_l b[l,i] Y[l,s]`.
pub fn assemble_projected(
    a: &SensitivityTensor,
    b: &PrimitiveSensitivities,
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    mode: AssemblyMode,
    test_basis_id: impl Into<String>,
) -> Result<ProjectedSystem> {
    let dims = validate_problem(a, b, x, Some(y))?;
    let p = dims.n_test.expect("test basis supplied");
    let maps = FlatIndexMaps::new(dims.n_primitives, p, dims.n_instruments, dims.n_basis);
    let n_paths = dims.n_paths;

    let (mut bm, mut beta) = match mode {
        AssemblyMode::Sequential => accumulate_projected_block(0..n_paths, a, b, x, y, &maps),
        AssemblyMode::Blocked { block_size } => {
            let ranges: Vec<_> = (0..n_paths)
                .step_by(block_size.max(1))
                .map(|s| s..(s + block_size).min(n_paths))
                .collect();
            let partials: Vec<_> = ranges
                .into_par_iter()
                .map(|range| accumulate_projected_block(range, a, b, x, y, &maps))
                .collect();
            // Pairwise merge in block order.
            let mut items = partials;
            while items.len() > 1 {
                let mut next = Vec::with_capacity(items.len().div_ceil(2));
                let mut iter = items.into_iter();
                while let Some((ba, va)) = iter.next() {
                    match iter.next() {
                        Some((bb, vb)) => next.push((ba + bb, va + vb)),
                        None => next.push((ba, va)),
                    }
                }
                items = next;
            }
            items.into_iter().next().expect("non-empty partials")
        }
    };
    let scale = 1.0 / n_paths as f64;
    bm *= scale;
    beta *= scale;

    for v in bm.iter().chain(beta.iter()) {
        if !v.is_finite() {
            return Err(Error::NonFinite {
                location: "projected-system accumulation".into(),
            });
        }
    }

    Ok(ProjectedSystem {
        b_flat: bm,
        beta_flat: beta,
        index_maps: maps,
        test_basis_id: test_basis_id.into(),
    })
}

/// Galerkin assembly: the projected system with test basis equal to the
/// solution basis.
pub fn assemble_galerkin(
    a: &SensitivityTensor,
    b: &PrimitiveSensitivities,
    x: &DMatrix<f64>,
    mode: AssemblyMode,
    basis_id: impl Into<String>,
) -> Result<ProjectedSystem> {
    assemble_projected(a, b, x, x, mode, basis_id)
}
