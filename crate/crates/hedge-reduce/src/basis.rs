//! Solution and test basis machinery: feature evaluation on path states,
//! empirical inner products and Gram matrices, orthonormalization with
//! rank reduction, and projection of scalar path variables.
//!
//! The empirical inner product is `<U, V>_N = (1/N) sum_l U_l V_l`. All
//! Gram and projection computations use this inner product, not the plain
//! Euclidean dot product.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::states::StateTable;
use crate::tensors::check_finite_matrix;

/// Default relative tolerance for dropping near-dependent columns during
/// orthonormalization.
pub const DEFAULT_DROP_TOL: f64 = 1e-8;

/// A single scalar feature of the per-path state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Feature {
    /// Constant 1.
    Constant,
    /// `var^degree`.
    Monomial { var: String, degree: u32 },
    /// Product of monomials in possibly different variables.
    Product { terms: Vec<MonomialTerm> },
    /// Half-space indicator `1{var > threshold}`.
    Indicator { var: String, threshold: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonomialTerm {
    pub var: String,
    pub degree: u32,
}

/// Ordered feature list plus a label of the information set the features
/// are measurable with respect to. The library records the tag but does
/// not verify adaptedness; that is the caller's responsibility.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisSpec {
    pub features: Vec<Feature>,
    #[serde(default)]
    pub measurability_tag: String,
}

impl BasisSpec {
    pub fn validate(&self) -> Result<()> {
        if self.features.is_empty() {
            return Err(Error::Config("basis feature list is empty".into()));
        }
        for f in &self.features {
            if let Feature::Indicator { threshold, .. } = f {
                if !threshold.is_finite() {
                    return Err(Error::Config("indicator threshold must be finite".into()));
                }
            }
        }
        Ok(())
    }

    /// Convenience: constant + monomials of `var` up to `degree`.
    pub fn polynomial(var: &str, degree: u32, tag: &str) -> Self {
        let mut features = vec![Feature::Constant];
        for d in 1..=degree {
            features.push(Feature::Monomial {
                var: var.to_string(),
                degree: d,
            });
        }
        Self {
            features,
            measurability_tag: tag.to_string(),
        }
    }

    pub fn constant(tag: &str) -> Self {
        Self {
            features: vec![Feature::Constant],
            measurability_tag: tag.to_string(),
        }
    }
}

fn eval_feature(feature: &Feature, states: &StateTable, out: &mut [f64]) -> Result<()> {
    match feature {
        Feature::Constant => out.fill(1.0),
        Feature::Monomial { var, degree } => {
            let col = states.column(var)?;
            for (o, &v) in out.iter_mut().zip(col) {
                *o = v.powi(*degree as i32);
            }
        }
        Feature::Product { terms } => {
            out.fill(1.0);
            for term in terms {
                let col = states.column(&term.var)?;
                for (o, &v) in out.iter_mut().zip(col) {
                    *o *= v.powi(term.degree as i32);
                }
            }
        }
        Feature::Indicator { var, threshold } => {
            let col = states.column(var)?;
            for (o, &v) in out.iter_mut().zip(col) {
                *o = if v > *threshold { 1.0 } else { 0.0 };
            }
        }
    }
    Ok(())
}

/// Evaluate the raw basis matrix `Z[l][q]` = q-th feature on path `l`.
pub fn evaluate_basis(spec: &BasisSpec, states: &StateTable) -> Result<DMatrix<f64>> {
    spec.validate()?;
    let n = states.n_paths();
    let mut z = DMatrix::zeros(n, spec.features.len());
    let mut buf = vec![0.0; n];
    for (q, feature) in spec.features.iter().enumerate() {
        eval_feature(feature, states, &mut buf)?;
        for (l, &v) in buf.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    location: format!("basis feature {} at path {}", q, l),
                });
            }
            z[(l, q)] = v;
        }
    }
    Ok(z)
}

/// Empirical inner product `(1/N) sum_l U_l V_l`.
pub fn empirical_inner(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            axis: "empirical inner product length",
            expected: u.len(),
            actual: v.len(),
        });
    }
    if u.is_empty() {
        return Err(Error::DimensionMismatch {
            axis: "empirical inner product length",
            expected: 1,
            actual: 0,
        });
    }
    let n = u.len() as f64;
    Ok(u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>() / n)
}

fn empirical_inner_cols(m: &DMatrix<f64>, a: usize, b: &DVector<f64>) -> f64 {
    let n = m.nrows() as f64;
    let mut acc = 0.0;
    for l in 0..m.nrows() {
        acc += m[(l, a)] * b[l];
    }
    acc / n
}

/// Symmetric matrix of pairwise empirical inner products of the columns
/// of a raw basis matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    values: DMatrix<f64>,
}

impl GramMatrix {
    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }
}

/// Gram matrix of `Z` in the empirical inner product.
pub fn gram(z: &DMatrix<f64>) -> Result<GramMatrix> {
    check_finite_matrix(z, "Z")?;
    let r = z.ncols();
    let n = z.nrows() as f64;
    let mut g = DMatrix::zeros(r, r);
    for k in 0..r {
        for q in k..r {
            let mut acc = 0.0;
            for l in 0..z.nrows() {
                acc += z[(l, k)] * z[(l, q)];
            }
            let v = acc / n;
            g[(k, q)] = v;
            g[(q, k)] = v;
        }
    }
    Ok(GramMatrix { values: g })
}

/// Orthonormalization report: which raw columns were dropped for rank
/// deficiency.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct OrthoReport {
    pub dropped: Vec<usize>,
}

/// A raw basis together with the transform `T` realizing the empirically
/// orthonormal columns `X = Z * T`. The transform is what must be stored
/// and reused out of sample.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisSet {
    spec: Option<BasisSpec>,
    raw: DMatrix<f64>,
    transform: DMatrix<f64>,
    ortho: DMatrix<f64>,
    basis_id: String,
    report: OrthoReport,
}

/// Test bases are built by the same machinery.
pub type TestBasisSet = BasisSet;

impl BasisSet {
    pub fn raw_values(&self) -> &DMatrix<f64> {
        &self.raw
    }

    /// `X = Z * T`, empirically orthonormal.
    pub fn ortho_values(&self) -> &DMatrix<f64> {
        &self.ortho
    }

    pub fn transform(&self) -> &DMatrix<f64> {
        &self.transform
    }

    pub fn basis_id(&self) -> &str {
        &self.basis_id
    }

    pub fn spec(&self) -> Option<&BasisSpec> {
        self.spec.as_ref()
    }

    pub fn report(&self) -> &OrthoReport {
        &self.report
    }

    pub fn n_paths(&self) -> usize {
        self.ortho.nrows()
    }

    /// Number of retained (orthonormal) columns.
    pub fn n_basis(&self) -> usize {
        self.ortho.ncols()
    }
}

/// Content hash identifying a fitted basis: spec (when known) plus the
/// exact bits of the transform.
pub fn basis_content_id(spec: Option<&BasisSpec>, transform: &DMatrix<f64>) -> String {
    let mut hasher = Sha256::new();
    if let Some(spec) = spec {
        hasher.update(toml::to_string(spec).unwrap_or_default().as_bytes());
    }
    hasher.update((transform.nrows() as u64).to_le_bytes());
    hasher.update((transform.ncols() as u64).to_le_bytes());
    for r in 0..transform.nrows() {
        for c in 0..transform.ncols() {
            hasher.update(transform[(r, c)].to_le_bytes());
        }
    }
    let digest = hasher.finalize();
    digest.iter().take(16).map(|b| format!("{:02x}", b)).collect()
}

/// Modified Gram-Schmidt in the empirical inner product with one
/// reorthogonalization pass. Columns whose residual empirical norm after
/// projection on the earlier columns falls below `drop_tol` times the
/// largest raw column norm are dropped; the report lists their indices.
pub fn orthonormalize(z: &DMatrix<f64>, drop_tol: f64) -> Result<BasisSet> {
    orthonormalize_with_spec(z, drop_tol, None)
}

pub fn orthonormalize_with_spec(
    z: &DMatrix<f64>,
    drop_tol: f64,
    spec: Option<BasisSpec>,
) -> Result<BasisSet> {
    check_finite_matrix(z, "Z")?;
    let n = z.nrows();
    let r = z.ncols();
    if n == 0 || r == 0 {
        return Err(Error::DimensionMismatch {
            axis: "Z",
            expected: 1,
            actual: 0,
        });
    }

    let mut max_norm: f64 = 0.0;
    for q in 0..r {
        let col: Vec<f64> = z.column(q).iter().copied().collect();
        max_norm = max_norm.max(empirical_inner(&col, &col)?.sqrt());
    }
    if max_norm == 0.0 {
        return Err(Error::EmptyBasis);
    }
    let threshold = drop_tol * max_norm;

    let mut ortho_cols: Vec<DVector<f64>> = Vec::new();
    let mut t_cols: Vec<DVector<f64>> = Vec::new();
    let mut dropped = Vec::new();

    for q in 0..r {
        let mut v: DVector<f64> = z.column(q).into();
        // Coefficients of v expressed in the raw columns: starts as e_q.
        let mut t = DVector::zeros(r);
        t[q] = 1.0;
        // Two MGS passes; the second removes the residue the first leaves
        // behind when columns are nearly dependent.
        for _ in 0..2 {
            for (k, x) in ortho_cols.iter().enumerate() {
                let n_f = n as f64;
                let c = v.dot(x) / n_f;
                v -= x * c;
                t -= &t_cols[k] * c;
            }
        }
        let norm = (v.dot(&v) / n as f64).sqrt();
        if norm <= threshold {
            dropped.push(q);
            continue;
        }
        v /= norm;
        t /= norm;
        ortho_cols.push(v);
        t_cols.push(t);
    }

    if ortho_cols.is_empty() {
        return Err(Error::EmptyBasis);
    }

    let r_kept = ortho_cols.len();
    let ortho = DMatrix::from_fn(n, r_kept, |l, q| ortho_cols[q][l]);
    let transform = DMatrix::from_fn(r, r_kept, |row, col| t_cols[col][row]);
    let basis_id = basis_content_id(spec.as_ref(), &transform);

    Ok(BasisSet {
        spec,
        raw: z.clone(),
        transform,
        ortho,
        basis_id,
        report: OrthoReport { dropped },
    })
}

/// Build a [`BasisSet`] from a spec and states: evaluate the raw features,
/// then orthonormalize.
pub fn build_basis(spec: &BasisSpec, states: &StateTable, drop_tol: f64) -> Result<BasisSet> {
    let z = evaluate_basis(spec, states)?;
    orthonormalize_with_spec(&z, drop_tol, Some(spec.clone()))
}

/// Re-evaluate a stored basis on new states: raw features through the
/// stored transform. Pure function of the states, bitwise reproducible.
pub fn apply_basis(
    spec: &BasisSpec,
    transform: &DMatrix<f64>,
    states: &StateTable,
) -> Result<DMatrix<f64>> {
    let z = evaluate_basis(spec, states)?;
    if z.ncols() != transform.nrows() {
        return Err(Error::DimensionMismatch {
            axis: "transform rows",
            expected: z.ncols(),
            actual: transform.nrows(),
        });
    }
    Ok(z * transform)
}

/// Empirical orthogonal projection of a scalar path variable onto the
/// orthonormal basis. Returns the coefficients `c_s = <U, X_s>_N` and the
/// fitted vector `sum_s c_s X_s`.
pub fn project(u: &[f64], basis: &BasisSet) -> Result<(DVector<f64>, DVector<f64>)> {
    let n = basis.n_paths();
    if u.len() != n {
        return Err(Error::DimensionMismatch {
            axis: "projection input length",
            expected: n,
            actual: u.len(),
        });
    }
    let uv = DVector::from_column_slice(u);
    let r = basis.n_basis();
    let mut coeffs = DVector::zeros(r);
    for s in 0..r {
        coeffs[s] = empirical_inner_cols(basis.ortho_values(), s, &uv);
    }
    let fitted = basis.ortho_values() * &coeffs;
    Ok((coeffs, fitted))
}
