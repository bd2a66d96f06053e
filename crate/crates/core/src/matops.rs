//! Matrix and monomial operators used throughout the solvers: Kronecker
//! product, vectorization, the scaled half-vectorization paired with the
//! quadratic-monomial map, and singular-value rank determination.
//!
//! The half-vectorization convention here doubles off-diagonal entries while
//! the monomial map does not, so that for symmetric `P`
//!
//! ```text
//! x' P x = bar(x)' vech_scaled(P)
//! ```
//!
//! Both maps scan the upper triangle row by row; [`vech_pairs`] is the single
//! source of truth for that ordering.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SlqError};

/// Index pairs `(i, j)` with `i <= j`, scanning the upper triangle row by
/// row: `(0,0), (0,1), ..., (0,n-1), (1,1), ..., (n-1,n-1)`.
pub fn vech_pairs(n: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..n).flat_map(move |i| (i..n).map(move |j| (i, j)))
}

/// Length of the half-vectorization of an `n x n` symmetric matrix.
pub fn vech_len(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Inverse of [`vech_len`]: the `n` with `n(n+1)/2 == len`, if any.
pub fn triangular_dim(len: usize) -> Option<usize> {
    // n = (sqrt(8 len + 1) - 1) / 2
    let n = ((((8 * len + 1) as f64).sqrt() - 1.0) / 2.0).round() as usize;
    (vech_len(n) == len).then_some(n)
}

/// A square matrix kept exactly symmetric by construction.
///
/// Built as `(M + M')/2`, so `m[(i,j)] == m[(j,i)]` holds bitwise.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    /// Symmetrizes `m`. Errors when `m` is not square.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(SlqError::Dimension(format!(
                "symmetric matrix must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let sym = (&m + m.transpose()) * 0.5;
        Ok(Self(sym))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    /// Eigenvalues in ascending order (the matrix is symmetric, so they are
    /// real).
    pub fn eigenvalues(&self) -> DVector<f64> {
        let mut ev = self.0.clone().symmetric_eigen().eigenvalues;
        ev.as_mut_slice().sort_by(|a, b| a.total_cmp(b));
        ev
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues()[0]
    }
}

impl std::ops::Deref for SymMatrix {
    type Target = DMatrix<f64>;
    fn deref(&self) -> &Self::Target {
        &self.0
    }
}

/// Scaled half-vectorization of a symmetric `n x n` matrix: length
/// `n(n+1)/2`, diagonal entries unscaled, off-diagonal entries doubled.
#[derive(Debug, Clone, PartialEq)]
pub struct VechVector {
    n: usize,
    data: DVector<f64>,
}

impl VechVector {
    /// Wraps a raw vector, checking that its length is a triangular number.
    pub fn from_vector(data: DVector<f64>) -> Result<Self> {
        let n =
            triangular_dim(data.len()).ok_or(SlqError::NotTriangularLength { len: data.len() })?;
        Ok(Self { n, data })
    }

    /// Dimension `n` of the matrix this vector half-vectorizes.
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.data
    }
}

/// Quadratic monomials `x_i x_j`, `i <= j`, of a vector, in [`vech_pairs`]
/// order. Same length as [`VechVector`], no scaling.
#[derive(Debug, Clone, PartialEq)]
pub struct MonomialVector {
    n: usize,
    data: DVector<f64>,
}

impl MonomialVector {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.data
    }
}

/// Kronecker product `A (x) B`.
///
/// Satisfies `vecm(D E F) = kron(F', D) * vecm(E)` for conformable matrices.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

/// Column-stacking vectorization.
pub fn vecm(a: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(a.as_slice())
}

/// Scaled half-vectorization: `[p11, 2 p12, ..., 2 p1n, p22, 2 p23, ..., pnn]`.
pub fn vech_scaled(p: &SymMatrix) -> VechVector {
    let n = p.dim();
    let data = DVector::from_iterator(
        vech_len(n),
        vech_pairs(n).map(|(i, j)| if i == j { p[(i, j)] } else { 2.0 * p[(i, j)] }),
    );
    VechVector { n, data }
}

/// Inverse of [`vech_scaled`]: off-diagonal entries are halved back, so the
/// round trip is exact.
pub fn unvech_scaled(v: &VechVector) -> SymMatrix {
    let n = v.dim();
    let mut p = DMatrix::zeros(n, n);
    for (k, (i, j)) in vech_pairs(n).enumerate() {
        if i == j {
            p[(i, j)] = v.data[k];
        } else {
            let half = 0.5 * v.data[k];
            p[(i, j)] = half;
            p[(j, i)] = half;
        }
    }
    SymMatrix(p)
}

/// Quadratic-monomial map: `[x1^2, x1 x2, ..., x1 xn, x2^2, ..., xn^2]`.
pub fn bar(x: &DVector<f64>) -> MonomialVector {
    let n = x.len();
    let data = DVector::from_iterator(vech_len(n), vech_pairs(n).map(|(i, j)| x[i] * x[j]));
    MonomialVector { n, data }
}

/// Zero-one selector `L` with `bar(y) = L * (y (x) y)` for every `y`.
///
/// Row `(i, j)` picks the `(i, j)` entry of `vec(y y')`, i.e. column
/// `j * n + i`. Size `n(n+1)/2 x n^2`.
pub fn monomial_selector(n: usize) -> DMatrix<f64> {
    let mut l = DMatrix::zeros(vech_len(n), n * n);
    for (r, (i, j)) in vech_pairs(n).enumerate() {
        l[(r, j * n + i)] = 1.0;
    }
    l
}

/// Number of singular values exceeding `tol` times the largest one.
pub fn numeric_rank(m: &DMatrix<f64>, tol: f64) -> usize {
    assert!(tol > 0.0, "rank tolerance must be positive");
    if m.is_empty() {
        return 0;
    }
    let sv = m.clone().singular_values();
    let max = sv.max();
    if max == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > tol * max).count()
}
