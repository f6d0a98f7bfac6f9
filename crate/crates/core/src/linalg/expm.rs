//! Matrix exponential via scaling-and-squaring with a Padé(13) approximant,
//! and its directional (Fréchet) derivative via the block-matrix identity
//!
//! ```text
//! exp([[A, E], [0, A]]) = [[exp(A), L(A, E)], [0, exp(A)]]
//! ```
//!
//! so the derivative inherits the accuracy of the exponential itself with a
//! single code path.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::types::{Matrix, OrthogonalMatrix, SkewSymmetric};

/// Padé(13) numerator coefficients (Higham, "The Scaling and Squaring Method
/// for the Matrix Exponential Revisited", 2005).
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

/// Threshold on ||A||_1 below which the unscaled Padé(13) approximant meets
/// double-precision accuracy.
const THETA13: f64 = 5.371920351148152;

fn one_norm(a: &DMatrix<f64>) -> f64 {
    let mut max = 0.0_f64;
    for j in 0..a.ncols() {
        let col_sum: f64 = a.column(j).iter().map(|x| x.abs()).sum();
        max = max.max(col_sum);
    }
    max
}

/// exp(A) for an arbitrary square real matrix.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    assert!(a.is_square(), "expm requires a square matrix");
    let n = a.nrows();
    if n == 1 {
        return DMatrix::from_element(1, 1, a[(0, 0)].exp());
    }

    let norm = one_norm(a);
    let squarings = if norm > THETA13 {
        (norm / THETA13).log2().ceil() as u32
    } else {
        0
    };
    let scaled = a / f64::powi(2.0, squarings as i32);

    let mut result = pade13(&scaled);
    for _ in 0..squarings {
        result = &result * &result;
    }
    result
}

fn pade13(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    let a2 = a * a;
    let a4 = &a2 * &a2;
    let a6 = &a2 * &a4;

    let u_inner = &a6 * (PADE13[13] * &a6 + PADE13[11] * &a4 + PADE13[9] * &a2)
        + PADE13[7] * &a6
        + PADE13[5] * &a4
        + PADE13[3] * &a2
        + PADE13[1] * &eye;
    let u = a * u_inner;
    let v = &a6 * (PADE13[12] * &a6 + PADE13[10] * &a4 + PADE13[8] * &a2)
        + PADE13[6] * &a6
        + PADE13[4] * &a4
        + PADE13[2] * &a2
        + PADE13[0] * &eye;

    let denom = &v - &u;
    let numer = &v + &u;
    denom
        .lu()
        .solve(&numer)
        .expect("Padé denominator is nonsingular for scaled input")
}

/// exp(A) of a skew-symmetric matrix; the result lies in the orthogonal group.
pub fn expm_skew(a: &SkewSymmetric) -> Result<OrthogonalMatrix> {
    OrthogonalMatrix::new(expm(a.as_matrix()))
}

/// Returns (exp(A), L(A, E)) where L is the directional derivative of the
/// exponential at A along E.
pub fn expm_frechet(a: &SkewSymmetric, e: &Matrix) -> Result<(OrthogonalMatrix, Matrix)> {
    if e.rows() != a.dim() || e.cols() != a.dim() {
        return Err(Error::dimension(
            "expm_frechet",
            format!("{0}x{0} direction", a.dim()),
            format!("{}x{}", e.rows(), e.cols()),
        ));
    }
    let (value, derivative) = expm_frechet_raw(a.as_matrix(), e.as_matrix());
    Ok((OrthogonalMatrix::new(value)?, Matrix::new(derivative)?))
}

/// Block-trick evaluation on raw matrices; also used by the reverse-mode
/// pass, where the base point is the transposed step generator.
pub(crate) fn expm_frechet_raw(a: &DMatrix<f64>, e: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let mut block = DMatrix::zeros(2 * n, 2 * n);
    block.view_mut((0, 0), (n, n)).copy_from(a);
    block.view_mut((0, n), (n, n)).copy_from(e);
    block.view_mut((n, n), (n, n)).copy_from(a);
    let big = expm(&block);
    let value = big.view((0, 0), (n, n)).into_owned();
    let derivative = big.view((0, n), (n, n)).into_owned();
    (value, derivative)
}
