//! Dense real linear algebra with structural matrix types, the skew matrix
//! exponential and its Fréchet derivative, and seeded manifold sampling.

mod expm;
mod ops;
mod random;
mod types;

pub use expm::{expm, expm_frechet, expm_skew};
pub(crate) use expm::expm_frechet_raw;
pub use ops::{
    antisymmetrize, commutator, eig_symmetric, eig_symmetric_full, orthogonality_defect,
    spectral_norm, stiefel_defect, symmetric_eigenvalues, symmetrize,
};
pub(crate) use ops::{antisymmetrize_raw, commutator_raw, symmetrize_raw};
pub use random::{
    haar_random_orthogonal, haar_random_stiefel, random_skew, random_symmetric,
    random_unit_vector,
};
pub(crate) use random::{gaussian_matrix, gaussian_vector, haar_orthogonal_with,
    haar_stiefel_with, rng_from_seed};
pub use types::{
    Matrix, OrthogonalMatrix, SkewSymmetric, StiefelMatrix, SymmetricMatrix, ORTHO_TOL, SKEW_TOL,
    STIEFEL_TOL, SYM_TOL,
};
