//! Seeded random constructions on the manifolds.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::linalg::types::{OrthogonalMatrix, SkewSymmetric, StiefelMatrix, SymmetricMatrix};

pub(crate) fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub(crate) fn gaussian_matrix<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

pub(crate) fn gaussian_vector<R: Rng>(len: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(len, |_, _| rng.sample(StandardNormal))
}

/// Orthonormal factor of a Gaussian matrix with the R-diagonal sign fix,
/// which makes the distribution exactly Haar on O(dim).
pub fn haar_random_orthogonal(dim: usize, seed: u64) -> OrthogonalMatrix {
    let mut rng = rng_from_seed(seed);
    haar_orthogonal_with(dim, &mut rng)
}

pub(crate) fn haar_orthogonal_with<R: Rng>(dim: usize, rng: &mut R) -> OrthogonalMatrix {
    assert!(dim >= 1, "haar_random_orthogonal requires dim >= 1");
    let q = qr_orthonormal(gaussian_matrix(dim, dim, rng));
    OrthogonalMatrix::new(q).expect("QR factor is orthogonal to machine precision")
}

/// Haar-style random Stiefel matrix for either orientation.
pub fn haar_random_stiefel(rows: usize, cols: usize, seed: u64) -> StiefelMatrix {
    let mut rng = rng_from_seed(seed);
    haar_stiefel_with(rows, cols, &mut rng)
}

pub(crate) fn haar_stiefel_with<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> StiefelMatrix {
    assert!(rows >= 1 && cols >= 1, "Stiefel dimensions must be positive");
    let inner = if rows >= cols {
        qr_orthonormal(gaussian_matrix(rows, cols, rng))
    } else {
        qr_orthonormal(gaussian_matrix(cols, rows, rng)).transpose()
    };
    StiefelMatrix::new(inner).expect("QR factor satisfies the Stiefel constraint")
}

/// Thin orthonormal factor with positive R diagonal (sign-fixed QR).
fn qr_orthonormal(g: DMatrix<f64>) -> DMatrix<f64> {
    let cols = g.ncols();
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..cols {
        if r[(j, j)] < 0.0 {
            for i in 0..q.nrows() {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    q
}

/// Random symmetric matrix with Gaussian entries, scaled so its spectral
/// norm does not exceed `max_spectral_norm`.
pub fn random_symmetric<R: Rng>(dim: usize, max_spectral_norm: f64, rng: &mut R) -> SymmetricMatrix {
    let g = gaussian_matrix(dim, dim, rng);
    let sym = crate::linalg::ops::symmetrize_raw(&g);
    let norm = crate::linalg::ops::spectral_norm(&sym);
    let scaled = if norm > 0.0 {
        &sym * (max_spectral_norm / norm)
    } else {
        sym
    };
    SymmetricMatrix::new(scaled).expect("symmetrized matrix is exactly symmetric")
}

/// Random skew-symmetric matrix with Gaussian entries, Frobenius-scaled.
pub fn random_skew<R: Rng>(dim: usize, frobenius_norm: f64, rng: &mut R) -> SkewSymmetric {
    let g = gaussian_matrix(dim, dim, rng);
    let skew = crate::linalg::ops::antisymmetrize_raw(&g);
    let norm = skew.norm();
    let scaled = if norm > 0.0 {
        &skew * (frobenius_norm / norm)
    } else {
        skew
    };
    SkewSymmetric::new(scaled).expect("antisymmetrized matrix is exactly skew")
}

/// Random unit vector (uniform on the sphere).
pub fn random_unit_vector<R: Rng>(len: usize, rng: &mut R) -> DVector<f64> {
    loop {
        let v = gaussian_vector(len, rng);
        let norm = v.norm();
        if norm > 1e-12 {
            return v / norm;
        }
    }
}
