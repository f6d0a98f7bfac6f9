//! The trainable parameter record of the policy network and its ambient
//! (unconstrained) counterpart used for perturbation-based evaluation.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, OrthogonalMatrix, StiefelMatrix, SymmetricMatrix};

/// Shape of a policy parameter set: state dimension d, hidden width n,
/// action dimension m.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThetaDims {
    pub state_dim: usize,
    pub hidden_dim: usize,
    pub action_dim: usize,
}

impl ThetaDims {
    pub fn new(state_dim: usize, hidden_dim: usize, action_dim: usize) -> Self {
        ThetaDims {
            state_dim,
            hidden_dim,
            action_dim,
        }
    }

    /// Total ambient parameter count:
    /// n·d + m·n + n + n² + n² + n².
    pub fn flat_len(&self) -> usize {
        let (d, n, m) = (self.state_dim, self.hidden_dim, self.action_dim);
        n * d + m * n + n + 3 * n * n
    }
}

/// Full trainable parameter set θ = {Ω₁, Ω₂, b, N, Q, W₀}: embedding and
/// readout on Stiefel manifolds, bias, the two symmetric generator matrices,
/// and the initial point of the matrix flow.
#[derive(Debug, Clone)]
pub struct ThetaParams {
    pub omega1: StiefelMatrix,
    pub omega2: StiefelMatrix,
    pub bias: DVector<f64>,
    pub n_mat: SymmetricMatrix,
    pub q: SymmetricMatrix,
    pub w0: OrthogonalMatrix,
}

impl ThetaParams {
    pub fn new(
        omega1: StiefelMatrix,
        omega2: StiefelMatrix,
        bias: DVector<f64>,
        n_mat: SymmetricMatrix,
        q: SymmetricMatrix,
        w0: OrthogonalMatrix,
    ) -> Result<Self> {
        let n = omega1.rows();
        let ok = omega2.cols() == n
            && bias.len() == n
            && n_mat.dim() == n
            && q.dim() == n
            && w0.dim() == n;
        if !ok {
            return Err(Error::dimension(
                "ThetaParams::new",
                format!("blocks consistent with hidden width {n}"),
                format!(
                    "omega2 {}x{}, bias {}, n_mat {}, q {}, w0 {}",
                    omega2.rows(),
                    omega2.cols(),
                    bias.len(),
                    n_mat.dim(),
                    q.dim(),
                    w0.dim()
                ),
            ));
        }
        if !bias.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite {
                context: "ThetaParams::new bias",
            });
        }
        Ok(ThetaParams {
            omega1,
            omega2,
            bias,
            n_mat,
            q,
            w0,
        })
    }

    /// Seeded random initialization: Haar-style manifold blocks, symmetric
    /// generator matrices with spectral norm `sym_scale`, and a Gaussian
    /// bias with entry scale `bias_scale`.
    pub fn random(dims: ThetaDims, sym_scale: f64, bias_scale: f64, seed: u64) -> Self {
        let mut rng = linalg::rng_from_seed(seed);
        let (d, n, m) = (dims.state_dim, dims.hidden_dim, dims.action_dim);
        let omega1 = linalg::haar_stiefel_with(n, d, &mut rng);
        let omega2 = linalg::haar_stiefel_with(m, n, &mut rng);
        let bias = linalg::gaussian_vector(n, &mut rng) * bias_scale;
        let n_mat = linalg::random_symmetric(n, sym_scale, &mut rng);
        let q = linalg::random_symmetric(n, sym_scale, &mut rng);
        let w0 = linalg::haar_orthogonal_with(n, &mut rng);
        ThetaParams {
            omega1,
            omega2,
            bias,
            n_mat,
            q,
            w0,
        }
    }

    pub fn dims(&self) -> ThetaDims {
        ThetaDims {
            state_dim: self.omega1.cols(),
            hidden_dim: self.omega1.rows(),
            action_dim: self.omega2.rows(),
        }
    }

    /// Largest constraint defect over the manifold blocks.
    pub fn max_manifold_defect(&self) -> f64 {
        self.omega1
            .defect()
            .max(self.omega2.defect())
            .max(self.w0.defect())
    }

    /// Ambient copy with the structural types stripped.
    pub fn to_raw(&self) -> RawTheta {
        RawTheta {
            omega1: self.omega1.as_matrix().clone(),
            omega2: self.omega2.as_matrix().clone(),
            bias: self.bias.clone(),
            n_mat: self.n_mat.as_matrix().clone(),
            q: self.q.as_matrix().clone(),
            w0: self.w0.as_matrix().clone(),
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.to_raw().to_flat()
    }
}

/// θ without manifold validation. Gaussian perturbation for smoothed-
/// objective evaluation intentionally leaves every manifold; rollouts remain
/// well defined because exp of the (still computable) step generator is
/// applied verbatim.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTheta {
    pub omega1: DMatrix<f64>,
    pub omega2: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub n_mat: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub w0: DMatrix<f64>,
}

impl RawTheta {
    pub fn dims(&self) -> ThetaDims {
        ThetaDims {
            state_dim: self.omega1.ncols(),
            hidden_dim: self.omega1.nrows(),
            action_dim: self.omega2.nrows(),
        }
    }

    /// Fixed block order: Ω₁, Ω₂, b, N, Q, W₀, each matrix row-major.
    pub fn to_flat(&self) -> Vec<f64> {
        let dims = self.dims();
        let mut flat = Vec::with_capacity(dims.flat_len());
        push_row_major(&mut flat, &self.omega1);
        push_row_major(&mut flat, &self.omega2);
        flat.extend(self.bias.iter());
        push_row_major(&mut flat, &self.n_mat);
        push_row_major(&mut flat, &self.q);
        push_row_major(&mut flat, &self.w0);
        flat
    }

    /// Inverse of [`RawTheta::to_flat`] for the given shape.
    pub fn from_flat(dims: ThetaDims, flat: &[f64]) -> Result<Self> {
        if flat.len() != dims.flat_len() {
            return Err(Error::dimension(
                "RawTheta::from_flat",
                format!("{} entries", dims.flat_len()),
                format!("{} entries", flat.len()),
            ));
        }
        fn take(flat: &[f64], offset: &mut usize, rows: usize, cols: usize) -> DMatrix<f64> {
            let m = DMatrix::from_row_slice(rows, cols, &flat[*offset..*offset + rows * cols]);
            *offset += rows * cols;
            m
        }
        let (d, n, m) = (dims.state_dim, dims.hidden_dim, dims.action_dim);
        let mut offset = 0;
        let omega1 = take(flat, &mut offset, n, d);
        let omega2 = take(flat, &mut offset, m, n);
        let bias = DVector::from_column_slice(&flat[offset..offset + n]);
        offset += n;
        let n_mat = take(flat, &mut offset, n, n);
        let q = take(flat, &mut offset, n, n);
        let w0 = take(flat, &mut offset, n, n);
        Ok(RawTheta {
            omega1,
            omega2,
            bias,
            n_mat,
            q,
            w0,
        })
    }
}

fn push_row_major(flat: &mut Vec<f64>, m: &DMatrix<f64>) {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            flat.push(m[(i, j)]);
        }
    }
}
