//! Elementary structural operations: (anti)symmetrization, the Lie bracket,
//! constraint defects, and the symmetric eigensolver.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::linalg::types::{Matrix, SkewSymmetric, SymmetricMatrix};

/// M - Mᵀ. The result is exactly antisymmetric in floating point.
///
/// Note the absence of a 1/2 factor: this is the gate map behind the gated
/// generator, not the skew projection.
pub fn antisymmetrize(m: &Matrix) -> Result<SkewSymmetric> {
    if !m.is_square() {
        return Err(Error::dimension(
            "antisymmetrize",
            "square matrix",
            format!("{}x{}", m.rows(), m.cols()),
        ));
    }
    Ok(SkewSymmetric::from_raw_unchecked(antisymmetrize_raw(
        m.as_matrix(),
    )))
}

pub(crate) fn antisymmetrize_raw(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    DMatrix::from_fn(n, n, |i, j| m[(i, j)] - m[(j, i)])
}

/// (M + Mᵀ)/2. The result is exactly symmetric in floating point.
pub fn symmetrize(m: &Matrix) -> Result<SymmetricMatrix> {
    if !m.is_square() {
        return Err(Error::dimension(
            "symmetrize",
            "square matrix",
            format!("{}x{}", m.rows(), m.cols()),
        ));
    }
    Ok(SymmetricMatrix::from_raw_unchecked(symmetrize_raw(
        m.as_matrix(),
    )))
}

pub(crate) fn symmetrize_raw(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    DMatrix::from_fn(n, n, |i, j| (m[(i, j)] + m[(j, i)]) * 0.5)
}

/// Lie bracket [A, B] = AB - BA.
///
/// Both products are accumulated with the same index order, so the bracket
/// of two exactly symmetric matrices is exactly antisymmetric in floating
/// point, not just up to roundoff.
pub fn commutator(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if !a.is_square() || !b.is_square() || a.rows() != b.rows() {
        return Err(Error::dimension(
            "commutator",
            "square matrices of equal dimension",
            format!("{}x{} and {}x{}", a.rows(), a.cols(), b.rows(), b.cols()),
        ));
    }
    Matrix::new(commutator_raw(a.as_matrix(), b.as_matrix()))
}

pub(crate) fn commutator_raw(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    DMatrix::from_fn(n, n, |i, j| {
        let mut ab = 0.0;
        let mut ba = 0.0;
        for k in 0..n {
            ab += a[(i, k)] * b[(k, j)];
            ba += b[(i, k)] * a[(k, j)];
        }
        ab - ba
    })
}

/// ||WᵀW - I||_F, the measured deviation from orthogonality.
pub fn orthogonality_defect(w: &DMatrix<f64>) -> f64 {
    let gram = w.transpose() * w;
    let n = gram.nrows();
    let mut sum = 0.0;
    for i in 0..n {
        for j in 0..n {
            let target = if i == j { 1.0 } else { 0.0 };
            let d = gram[(i, j)] - target;
            sum += d * d;
        }
    }
    sum.sqrt()
}

/// Stiefel defect: ||ΩᵀΩ - I||_F for tall matrices, ||ΩΩᵀ - I||_F for wide.
pub fn stiefel_defect(m: &DMatrix<f64>) -> f64 {
    if m.nrows() >= m.ncols() {
        orthogonality_defect(m)
    } else {
        orthogonality_defect(&m.transpose())
    }
}

/// Eigenvalues of a symmetric matrix, sorted ascending.
pub fn eig_symmetric(s: &SymmetricMatrix) -> Vec<f64> {
    symmetric_eigenvalues(s.as_matrix())
}

/// Eigenvalues of the symmetric part of `m`, sorted ascending.
///
/// Intended for matrices that are symmetric up to roundoff, e.g. WᵀQW along
/// an integrated trajectory.
pub fn symmetric_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let eig = SymmetricEigen::new(symmetrize_raw(m));
    let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    vals.sort_by(|a, b| a.partial_cmp(b).expect("eigenvalues are finite"));
    vals
}

/// Full symmetric eigendecomposition: ascending eigenvalues and the matching
/// orthonormal eigenvector columns.
pub fn eig_symmetric_full(s: &SymmetricMatrix) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(s.as_matrix().clone());
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[a]
            .partial_cmp(&eig.eigenvalues[b])
            .expect("eigenvalues are finite")
    });
    let vals: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let n = s.dim();
    let vecs = DMatrix::from_fn(n, n, |i, j| eig.eigenvectors[(i, order[j])]);
    (vals, vecs)
}

/// Largest singular value (operator 2-norm).
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .singular_values()
        .iter()
        .copied()
        .fold(0.0, f64::max)
}
