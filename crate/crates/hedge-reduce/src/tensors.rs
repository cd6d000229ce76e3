//! Core containers for pathwise sensitivity data, index flattening and
//! hedge-ratio reconstruction.
//!
//! Conventions: the path index is outermost (path-major storage) so that
//! assembly can stream one path at a time. Public flattening maps are
//! documented 1-based; the 0-based variants used internally keep the same
//! ordering (test-index-major rows, basis-index-major columns).

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Magic string at the head of the binary tensor container format.
pub const TENSOR_MAGIC: &[u8; 7] = b"HRTENS1";

/// Pathwise hedge-instrument sensitivities `A[path][primitive][instrument]`,
/// shape `N x n x m`, stored path-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityTensor {
    values: Vec<f64>,
    n_paths: usize,
    n_primitives: usize,
    n_instruments: usize,
}

impl SensitivityTensor {
    pub fn new(
        values: Vec<f64>,
        n_paths: usize,
        n_primitives: usize,
        n_instruments: usize,
    ) -> Result<Self> {
        if n_paths == 0 || n_primitives == 0 || n_instruments == 0 {
            return Err(Error::DimensionMismatch {
                axis: "N/n/m",
                expected: 1,
                actual: 0,
            });
        }
        let expected = n_paths * n_primitives * n_instruments;
        if values.len() != expected {
            return Err(Error::DimensionMismatch {
                axis: "values",
                expected,
                actual: values.len(),
            });
        }
        // Reject non-finite entries at construction so AD bugs fail fast
        // with a path index attached.
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            let per_path = n_primitives * n_instruments;
            let l = pos / per_path;
            let rem = pos % per_path;
            return Err(Error::NonFinite {
                location: format!(
                    "A[path={}, primitive={}, instrument={}]",
                    l,
                    rem / n_instruments,
                    rem % n_instruments
                ),
            });
        }
        Ok(Self {
            values,
            n_paths,
            n_primitives,
            n_instruments,
        })
    }

    /// Build from a closure `f(path, primitive, instrument)`.
    pub fn from_fn<F>(n_paths: usize, n_primitives: usize, n_instruments: usize, f: F) -> Result<Self>
    where
        F: Fn(usize, usize, usize) -> f64,
    {
        let mut values = Vec::with_capacity(n_paths * n_primitives * n_instruments);
        for l in 0..n_paths {
            for i in 0..n_primitives {
                for j in 0..n_instruments {
                    values.push(f(l, i, j));
                }
            }
        }
        Self::new(values, n_paths, n_primitives, n_instruments)
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn n_primitives(&self) -> usize {
        self.n_primitives
    }

    pub fn n_instruments(&self) -> usize {
        self.n_instruments
    }

    #[inline]
    pub fn get(&self, path: usize, primitive: usize, instrument: usize) -> f64 {
        self.values[(path * self.n_primitives + primitive) * self.n_instruments + instrument]
    }

    /// The `n x m` slice `A_l` for one path.
    pub fn path_matrix(&self, path: usize) -> DMatrix<f64> {
        DMatrix::from_fn(self.n_primitives, self.n_instruments, |i, j| {
            self.get(path, i, j)
        })
    }

    /// Raw path-major storage.
    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }
}

/// Pathwise primitive sensitivities `b[path][primitive]`, shape `N x n`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimitiveSensitivities {
    values: DMatrix<f64>,
}

impl PrimitiveSensitivities {
    /// `values` has one row per path and one column per primitive.
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::DimensionMismatch {
                axis: "N/n",
                expected: 1,
                actual: 0,
            });
        }
        for l in 0..values.nrows() {
            for i in 0..values.ncols() {
                if !values[(l, i)].is_finite() {
                    return Err(Error::NonFinite {
                        location: format!("b[path={}, primitive={}]", l, i),
                    });
                }
            }
        }
        Ok(Self { values })
    }

    pub fn n_paths(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_primitives(&self) -> usize {
        self.values.ncols()
    }

    #[inline]
    pub fn get(&self, path: usize, primitive: usize) -> f64 {
        self.values[(path, primitive)]
    }

    /// The length-`n` vector `b_l` for one path.
    pub fn path_vector(&self, path: usize) -> DVector<f64> {
        self.values.row(path).transpose()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }
}

/// Fitted coefficient matrix `xi[instrument][basis]`, shape `m x r`, bound
/// to the identity of the basis it was fitted on.
#[derive(Debug, Clone, PartialEq)]
pub struct HedgeCoefficients {
    values: DMatrix<f64>,
    basis_id: String,
}

impl HedgeCoefficients {
    pub fn new(values: DMatrix<f64>, basis_id: impl Into<String>) -> Result<Self> {
        for v in values.iter() {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    location: "hedge coefficients".into(),
                });
            }
        }
        Ok(Self {
            values,
            basis_id: basis_id.into(),
        })
    }

    pub fn n_instruments(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_basis(&self) -> usize {
        self.values.ncols()
    }

    pub fn basis_id(&self) -> &str {
        &self.basis_id
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }
}

/// Reconstructed pathwise hedge ratios `phi[path][instrument]`, shape `N x m`.
#[derive(Debug, Clone, PartialEq)]
pub struct HedgeRatioMatrix {
    values: DMatrix<f64>,
}

impl HedgeRatioMatrix {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        for v in values.iter() {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    location: "hedge ratio matrix".into(),
                });
            }
        }
        Ok(Self { values })
    }

    pub fn n_paths(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_instruments(&self) -> usize {
        self.values.ncols()
    }

    #[inline]
    pub fn get(&self, path: usize, instrument: usize) -> f64 {
        self.values[(path, instrument)]
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }
}

/// Flat row index for the pair (primitive `i`, test index `s`), 1-based:
/// `(s-1)*n + i`.
pub fn flatten_row(i: usize, s: usize, n: usize) -> Result<usize> {
    if i < 1 || i > n || s < 1 {
        return Err(Error::IndexOutOfRange(format!("row(i={}, s={}, n={})", i, s, n)));
    }
    Ok((s - 1) * n + i)
}

/// Flat column index for the pair (instrument `j`, basis index `q`), 1-based:
/// `(q-1)*m + j`.
pub fn flatten_col(j: usize, q: usize, m: usize) -> Result<usize> {
    if j < 1 || j > m || q < 1 {
        return Err(Error::IndexOutOfRange(format!("col(j={}, q={}, m={})", j, q, m)));
    }
    Ok((q - 1) * m + j)
}

/// Bijective index maps between tensor indices and the flattened system.
/// Rows run over (primitive, test index), columns over (instrument, basis
/// index); the 0-based accessors keep the same ordering as the 1-based
/// formulas.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlatIndexMaps {
    pub n_primitives: usize,
    pub n_test: usize,
    pub n_instruments: usize,
    pub n_basis: usize,
}

impl FlatIndexMaps {
    pub fn new(n_primitives: usize, n_test: usize, n_instruments: usize, n_basis: usize) -> Self {
        Self {
            n_primitives,
            n_test,
            n_instruments,
            n_basis,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_primitives * self.n_test
    }

    pub fn n_cols(&self) -> usize {
        self.n_instruments * self.n_basis
    }

    /// 0-based row index for (primitive `i`, test index `s`).
    #[inline]
    pub fn row(&self, i: usize, s: usize) -> usize {
        s * self.n_primitives + i
    }

    /// 0-based column index for (instrument `j`, basis index `q`).
    #[inline]
    pub fn col(&self, j: usize, q: usize) -> usize {
        q * self.n_instruments + j
    }

    /// Inverse of `col`: flat column -> (instrument, basis index).
    #[inline]
    pub fn col_inv(&self, flat: usize) -> (usize, usize) {
        (flat % self.n_instruments, flat / self.n_instruments)
    }

    /// Inverse of `row`: flat row -> (primitive, test index).
    #[inline]
    pub fn row_inv(&self, flat: usize) -> (usize, usize) {
        (flat % self.n_primitives, flat / self.n_primitives)
    }

    /// Unflatten a coefficient vector of length `m*r` into an `m x r` matrix.
    pub fn unflatten_coefficients(&self, z: &DVector<f64>) -> Result<DMatrix<f64>> {
        if z.len() != self.n_cols() {
            return Err(Error::DimensionMismatch {
                axis: "coefficient vector",
                expected: self.n_cols(),
                actual: z.len(),
            });
        }
        Ok(DMatrix::from_fn(self.n_instruments, self.n_basis, |j, q| {
            z[self.col(j, q)]
        }))
    }

    /// Flatten an `m x r` coefficient matrix into a vector of length `m*r`.
    pub fn flatten_coefficients(&self, xi: &DMatrix<f64>) -> Result<DVector<f64>> {
        if xi.nrows() != self.n_instruments || xi.ncols() != self.n_basis {
            return Err(Error::DimensionMismatch {
                axis: "coefficient matrix",
                expected: self.n_instruments * self.n_basis,
                actual: xi.nrows() * xi.ncols(),
            });
        }
        let mut z = DVector::zeros(self.n_cols());
        for j in 0..self.n_instruments {
            for q in 0..self.n_basis {
                z[self.col(j, q)] = xi[(j, q)];
            }
        }
        Ok(z)
    }
}

/// Dimension summary returned by [`validate_problem`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProblemDims {
    pub n_paths: usize,
    pub n_primitives: usize,
    pub n_instruments: usize,
    pub n_basis: usize,
    pub n_test: Option<usize>,
}

/// Check that all inputs agree on the path count and that `A` and `b` agree
/// on the primitive count. Containers reject non-finite entries at
/// construction, so only the basis values are re-checked here.
pub fn validate_problem(
    a: &SensitivityTensor,
    b: &PrimitiveSensitivities,
    x: &DMatrix<f64>,
    y: Option<&DMatrix<f64>>,
) -> Result<ProblemDims> {
    let n_paths = a.n_paths();
    if b.n_paths() != n_paths {
        return Err(Error::DimensionMismatch {
            axis: "N (paths of b)",
            expected: n_paths,
            actual: b.n_paths(),
        });
    }
    if b.n_primitives() != a.n_primitives() {
        return Err(Error::DimensionMismatch {
            axis: "n (primitives of b)",
            expected: a.n_primitives(),
            actual: b.n_primitives(),
        });
    }
    if x.nrows() != n_paths {
        return Err(Error::DimensionMismatch {
            axis: "N (paths of X)",
            expected: n_paths,
            actual: x.nrows(),
        });
    }
    check_finite_matrix(x, "X")?;
    if let Some(y) = y {
        if y.nrows() != n_paths {
            return Err(Error::DimensionMismatch {
                axis: "N (paths of Y)",
                expected: n_paths,
                actual: y.nrows(),
            });
        }
        check_finite_matrix(y, "Y")?;
    }
    Ok(ProblemDims {
        n_paths,
        n_primitives: a.n_primitives(),
        n_instruments: a.n_instruments(),
        n_basis: x.ncols(),
        n_test: y.map(|y| y.ncols()),
    })
}

pub(crate) fn check_finite_matrix(m: &DMatrix<f64>, name: &str) -> Result<()> {
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            if !m[(r, c)].is_finite() {
                return Err(Error::NonFinite {
                    location: format!("{}[{}, {}]", name, r, c),
                });
            }
        }
    }
    Ok(())
}

/// Reconstruct pathwise hedge ratios `phi[l][j] = sum_q xi[j][q] * X[l][q]`.
///
/// `basis_id` must match the identity recorded at fitting time.
pub fn reconstruct_hedge(
    xi: &HedgeCoefficients,
    x: &DMatrix<f64>,
    basis_id: &str,
) -> Result<HedgeRatioMatrix> {
    if xi.basis_id() != basis_id {
        return Err(Error::BasisMismatch {
            expected: xi.basis_id().to_string(),
            actual: basis_id.to_string(),
        });
    }
    if x.ncols() != xi.n_basis() {
        return Err(Error::DimensionMismatch {
            axis: "r (basis columns)",
            expected: xi.n_basis(),
            actual: x.ncols(),
        });
    }
    HedgeRatioMatrix::new(x * xi.values().transpose())
}

// ---------------------------------------------------------------------------
// Binary container format: "HRTENS1" magic, three u64 LE dims, then
// row-major f64 LE values. Matrices are stored with the third dim = 1.
// ---------------------------------------------------------------------------

pub fn write_tensor_file(path: &Path, dims: [u64; 3], values: &[f64]) -> Result<()> {
    let expected = (dims[0] * dims[1] * dims[2]) as usize;
    if values.len() != expected {
        return Err(Error::DimensionMismatch {
            axis: "tensor file values",
            expected,
            actual: values.len(),
        });
    }
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(TENSOR_MAGIC)?;
    for d in dims {
        f.write_all(&d.to_le_bytes())?;
    }
    for v in values {
        f.write_all(&v.to_le_bytes())?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_tensor_file(path: &Path) -> Result<([u64; 3], Vec<f64>)> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 7];
    f.read_exact(&mut magic)
        .map_err(|_| Error::CorruptFile(format!("{}: truncated header", path.display())))?;
    if &magic != TENSOR_MAGIC {
        return Err(Error::CorruptFile(format!(
            "{}: bad magic {:?}",
            path.display(),
            magic
        )));
    }
    let mut dims = [0u64; 3];
    for d in dims.iter_mut() {
        let mut buf = [0u8; 8];
        f.read_exact(&mut buf)
            .map_err(|_| Error::CorruptFile(format!("{}: truncated dims", path.display())))?;
        *d = u64::from_le_bytes(buf);
    }
    let count = (dims[0] * dims[1] * dims[2]) as usize;
    let mut values = Vec::with_capacity(count);
    let mut buf = [0u8; 8];
    for _ in 0..count {
        f.read_exact(&mut buf)
            .map_err(|_| Error::CorruptFile(format!("{}: truncated values", path.display())))?;
        values.push(f64::from_le_bytes(buf));
    }
    if f.read(&mut buf)? != 0 {
        return Err(Error::CorruptFile(format!(
            "{}: trailing bytes after {} values",
            path.display(),
            count
        )));
    }
    Ok((dims, values))
}

impl SensitivityTensor {
    pub fn write_binary(&self, path: &Path) -> Result<()> {
        write_tensor_file(
            path,
            [
                self.n_paths as u64,
                self.n_primitives as u64,
                self.n_instruments as u64,
            ],
            &self.values,
        )
    }

    pub fn read_binary(path: &Path) -> Result<Self> {
        let (dims, values) = read_tensor_file(path)?;
        Self::new(values, dims[0] as usize, dims[1] as usize, dims[2] as usize)
    }

    /// One row per (path, primitive), `m` columns.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        let mut header = String::from("path,primitive");
        for j in 0..self.n_instruments {
            header.push_str(&format!(",instrument_{}", j));
        }
        writeln!(out, "{}", header)?;
        for l in 0..self.n_paths {
            for i in 0..self.n_primitives {
                let mut line = format!("{},{}", l, i);
                for j in 0..self.n_instruments {
                    line.push_str(&format!(",{:e}", self.get(l, i, j)));
                }
                writeln!(out, "{}", line)?;
            }
        }
        Ok(())
    }
}

/// Write an `N x k` matrix using the same container with third dim 1,
/// row-major.
pub fn write_matrix_binary(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut values = Vec::with_capacity(m.nrows() * m.ncols());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            values.push(m[(r, c)]);
        }
    }
    write_tensor_file(path, [m.nrows() as u64, m.ncols() as u64, 1], &values)
}

pub fn read_matrix_binary(path: &Path) -> Result<DMatrix<f64>> {
    let (dims, values) = read_tensor_file(path)?;
    if dims[2] != 1 {
        return Err(Error::CorruptFile(format!(
            "{}: expected matrix (third dim 1), got {}",
            path.display(),
            dims[2]
        )));
    }
    let (rows, cols) = (dims[0] as usize, dims[1] as usize);
    Ok(DMatrix::from_fn(rows, cols, |r, c| values[r * cols + c]))
}
