//! Structural matrix types.
//!
//! Each type validates its defining constraint on construction and is
//! immutable afterwards. Violations are constructor errors, never silent
//! repairs. Tolerances: 1e-12 entrywise for skew/symmetric structure,
//! 1e-9 Frobenius for orthogonal/Stiefel structure.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::ops::{orthogonality_defect, stiefel_defect};

/// Entrywise tolerance for skew-symmetry: max |a_ij + a_ji|.
pub const SKEW_TOL: f64 = 1e-12;
/// Entrywise tolerance for symmetry: max |a_ij - a_ji|.
pub const SYM_TOL: f64 = 1e-12;
/// Frobenius tolerance for orthogonality: ||WᵀW - I||_F.
pub const ORTHO_TOL: f64 = 1e-9;
/// Frobenius tolerance for the Stiefel constraint.
pub const STIEFEL_TOL: f64 = 1e-9;

fn ensure_finite(m: &DMatrix<f64>, context: &'static str) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { context })
    }
}

fn ensure_square(m: &DMatrix<f64>, context: &'static str) -> Result<()> {
    if m.nrows() == m.ncols() {
        Ok(())
    } else {
        Err(Error::dimension(
            context,
            "square matrix",
            format!("{}x{}", m.nrows(), m.ncols()),
        ))
    }
}

/// Dense real matrix with finite entries; the unstructured carrier type.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    inner: DMatrix<f64>,
}

impl Matrix {
    pub fn new(inner: DMatrix<f64>) -> Result<Self> {
        if inner.nrows() == 0 || inner.ncols() == 0 {
            return Err(Error::dimension(
                "Matrix::new",
                "positive dimensions",
                format!("{}x{}", inner.nrows(), inner.ncols()),
            ));
        }
        ensure_finite(&inner, "Matrix::new")?;
        Ok(Matrix { inner })
    }

    /// Builds from entries listed row by row.
    pub fn from_row_major(rows: usize, cols: usize, entries: &[f64]) -> Result<Self> {
        if entries.len() != rows * cols {
            return Err(Error::dimension(
                "Matrix::from_row_major",
                format!("{} entries", rows * cols),
                format!("{} entries", entries.len()),
            ));
        }
        Self::new(DMatrix::from_row_slice(rows, cols, entries))
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            inner: DMatrix::zeros(rows, cols),
        }
    }

    pub fn identity(dim: usize) -> Self {
        Matrix {
            inner: DMatrix::identity(dim, dim),
        }
    }

    pub fn rows(&self) -> usize {
        self.inner.nrows()
    }

    pub fn cols(&self) -> usize {
        self.inner.ncols()
    }

    pub fn is_square(&self) -> bool {
        self.inner.is_square()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.inner[(i, j)]
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.inner
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.inner
    }
}

/// Square matrix with A + Aᵀ = 0; the tangent-space representation of the
/// orthogonal group at the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct SkewSymmetric {
    inner: DMatrix<f64>,
}

impl SkewSymmetric {
    pub fn new(inner: DMatrix<f64>) -> Result<Self> {
        ensure_square(&inner, "SkewSymmetric::new")?;
        ensure_finite(&inner, "SkewSymmetric::new")?;
        let mut defect = 0.0_f64;
        for i in 0..inner.nrows() {
            for j in 0..=i {
                defect = defect.max((inner[(i, j)] + inner[(j, i)]).abs());
            }
        }
        if defect > SKEW_TOL {
            return Err(Error::Constraint {
                kind: "skew-symmetric",
                defect,
                tolerance: SKEW_TOL,
            });
        }
        Ok(SkewSymmetric { inner })
    }

    pub fn zeros(dim: usize) -> Self {
        SkewSymmetric {
            inner: DMatrix::zeros(dim, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.inner.nrows()
    }

    /// Scalar multiple; scaling preserves exact skewness.
    pub fn scale(&self, factor: f64) -> SkewSymmetric {
        SkewSymmetric {
            inner: &self.inner * factor,
        }
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.inner
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.inner
    }

    pub(crate) fn from_raw_unchecked(inner: DMatrix<f64>) -> Self {
        debug_assert!(inner.is_square());
        SkewSymmetric { inner }
    }
}

/// Square matrix with A = Aᵀ.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricMatrix {
    inner: DMatrix<f64>,
}

impl SymmetricMatrix {
    pub fn new(inner: DMatrix<f64>) -> Result<Self> {
        ensure_square(&inner, "SymmetricMatrix::new")?;
        ensure_finite(&inner, "SymmetricMatrix::new")?;
        let mut defect = 0.0_f64;
        for i in 0..inner.nrows() {
            for j in 0..i {
                defect = defect.max((inner[(i, j)] - inner[(j, i)]).abs());
            }
        }
        if defect > SYM_TOL {
            return Err(Error::Constraint {
                kind: "symmetric",
                defect,
                tolerance: SYM_TOL,
            });
        }
        Ok(SymmetricMatrix { inner })
    }

    pub fn zeros(dim: usize) -> Self {
        SymmetricMatrix {
            inner: DMatrix::zeros(dim, dim),
        }
    }

    pub fn identity(dim: usize) -> Self {
        SymmetricMatrix {
            inner: DMatrix::identity(dim, dim),
        }
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let dim = diag.len();
        let mut m = DMatrix::zeros(dim, dim);
        for (i, &v) in diag.iter().enumerate() {
            m[(i, i)] = v;
        }
        SymmetricMatrix { inner: m }
    }

    pub fn dim(&self) -> usize {
        self.inner.nrows()
    }

    pub fn trace(&self) -> f64 {
        self.inner.trace()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.inner
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.inner
    }

    pub(crate) fn from_raw_unchecked(inner: DMatrix<f64>) -> Self {
        debug_assert!(inner.is_square());
        SymmetricMatrix { inner }
    }
}

/// Square matrix with WᵀW = I within [`ORTHO_TOL`] (Frobenius).
#[derive(Debug, Clone, PartialEq)]
pub struct OrthogonalMatrix {
    inner: DMatrix<f64>,
}

impl OrthogonalMatrix {
    pub fn new(inner: DMatrix<f64>) -> Result<Self> {
        ensure_square(&inner, "OrthogonalMatrix::new")?;
        ensure_finite(&inner, "OrthogonalMatrix::new")?;
        let defect = orthogonality_defect(&inner);
        if defect > ORTHO_TOL {
            return Err(Error::Constraint {
                kind: "orthogonal",
                defect,
                tolerance: ORTHO_TOL,
            });
        }
        Ok(OrthogonalMatrix { inner })
    }

    pub fn identity(dim: usize) -> Self {
        OrthogonalMatrix {
            inner: DMatrix::identity(dim, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.inner.nrows()
    }

    /// Re-measures ||WᵀW - I||_F, e.g. after a long chain of updates.
    pub fn defect(&self) -> f64 {
        orthogonality_defect(&self.inner)
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.inner
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.inner
    }
}

/// Rectangular matrix with orthonormal columns (rows ≥ cols) or orthonormal
/// rows (rows < cols); the nonsquare extension of [`OrthogonalMatrix`].
#[derive(Debug, Clone, PartialEq)]
pub struct StiefelMatrix {
    inner: DMatrix<f64>,
}

impl StiefelMatrix {
    pub fn new(inner: DMatrix<f64>) -> Result<Self> {
        if inner.nrows() == 0 || inner.ncols() == 0 {
            return Err(Error::dimension(
                "StiefelMatrix::new",
                "positive dimensions",
                format!("{}x{}", inner.nrows(), inner.ncols()),
            ));
        }
        ensure_finite(&inner, "StiefelMatrix::new")?;
        let defect = stiefel_defect(&inner);
        if defect > STIEFEL_TOL {
            return Err(Error::Constraint {
                kind: "Stiefel",
                defect,
                tolerance: STIEFEL_TOL,
            });
        }
        Ok(StiefelMatrix { inner })
    }

    pub fn rows(&self) -> usize {
        self.inner.nrows()
    }

    pub fn cols(&self) -> usize {
        self.inner.ncols()
    }

    pub fn defect(&self) -> f64 {
        stiefel_defect(&self.inner)
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.inner
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.inner
    }
}
