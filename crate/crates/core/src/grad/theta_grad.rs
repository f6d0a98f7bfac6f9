//! Per-block Euclidean gradient record matching the θ layout.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::flows::{RawTheta, ThetaDims};

/// Unstructured gradients, one block per θ field, before any Riemannian
/// projection.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaGradient {
    pub omega1: DMatrix<f64>,
    pub omega2: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub n_mat: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub w0: DMatrix<f64>,
}

impl ThetaGradient {
    pub fn zeros(dims: ThetaDims) -> Self {
        let (d, n, m) = (dims.state_dim, dims.hidden_dim, dims.action_dim);
        ThetaGradient {
            omega1: DMatrix::zeros(n, d),
            omega2: DMatrix::zeros(m, n),
            bias: DVector::zeros(n),
            n_mat: DMatrix::zeros(n, n),
            q: DMatrix::zeros(n, n),
            w0: DMatrix::zeros(n, n),
        }
    }

    pub fn dims(&self) -> ThetaDims {
        ThetaDims {
            state_dim: self.omega1.ncols(),
            hidden_dim: self.omega1.nrows(),
            action_dim: self.omega2.nrows(),
        }
    }

    /// Reads a flat ambient vector in the standard block order.
    pub fn from_flat(dims: ThetaDims, flat: &[f64]) -> Result<Self> {
        let raw = RawTheta::from_flat(dims, flat)?;
        Ok(ThetaGradient {
            omega1: raw.omega1,
            omega2: raw.omega2,
            bias: raw.bias,
            n_mat: raw.n_mat,
            q: raw.q,
            w0: raw.w0,
        })
    }

    pub fn to_flat(&self) -> Vec<f64> {
        RawTheta {
            omega1: self.omega1.clone(),
            omega2: self.omega2.clone(),
            bias: self.bias.clone(),
            n_mat: self.n_mat.clone(),
            q: self.q.clone(),
            w0: self.w0.clone(),
        }
        .to_flat()
    }

    pub fn scale(&mut self, factor: f64) {
        self.omega1 *= factor;
        self.omega2 *= factor;
        self.bias *= factor;
        self.n_mat *= factor;
        self.q *= factor;
        self.w0 *= factor;
    }

    pub fn add_assign(&mut self, other: &ThetaGradient) {
        self.omega1 += &other.omega1;
        self.omega2 += &other.omega2;
        self.bias += &other.bias;
        self.n_mat += &other.n_mat;
        self.q += &other.q;
        self.w0 += &other.w0;
    }

    /// Squared Frobenius norm over all blocks.
    pub fn norm_squared(&self) -> f64 {
        self.omega1.norm_squared()
            + self.omega2.norm_squared()
            + self.bias.norm_squared()
            + self.n_mat.norm_squared()
            + self.q.norm_squared()
            + self.w0.norm_squared()
    }

    /// Named blocks in flat order, for per-block comparisons.
    pub fn blocks(&self) -> [(&'static str, &DMatrix<f64>); 5] {
        [
            ("omega1", &self.omega1),
            ("omega2", &self.omega2),
            ("n_mat", &self.n_mat),
            ("q", &self.q),
            ("w0", &self.w0),
        ]
    }
}
