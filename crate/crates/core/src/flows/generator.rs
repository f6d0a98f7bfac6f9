//! Velocity generators for the matrix flow on the orthogonal group, plus the
//! unconstrained trigonometric baseline.
//!
//! A generator maps (t, W) to a skew-symmetric velocity; the matrix flow then
//! advances by right-multiplication with exp(step · velocity), which keeps
//! the trajectory exactly on the group.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    self, commutator_raw, symmetrize_raw, OrthogonalMatrix, SkewSymmetric, SymmetricMatrix,
};

/// Which generator family produced a flow; carried on tapes and reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    Iso,
    Gated,
    TrigBaseline,
}

impl std::fmt::Display for GeneratorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            GeneratorKind::Iso => write!(f, "iso"),
            GeneratorKind::Gated => write!(f, "gated"),
            GeneratorKind::TrigBaseline => write!(f, "trig_baseline"),
        }
    }
}

/// Double-bracket velocity [WᵀQW, N] built from two learnable symmetric
/// matrices. The induced matrix flow is isospectral: the spectrum of WᵀQW is
/// invariant along the trajectory.
#[derive(Debug, Clone)]
pub struct IsoGenerator {
    q: SymmetricMatrix,
    n_mat: SymmetricMatrix,
}

impl IsoGenerator {
    pub fn new(q: SymmetricMatrix, n_mat: SymmetricMatrix) -> Result<Self> {
        if q.dim() != n_mat.dim() {
            return Err(Error::dimension(
                "IsoGenerator::new",
                format!("{0}x{0}", q.dim()),
                format!("{0}x{0}", n_mat.dim()),
            ));
        }
        Ok(IsoGenerator { q, n_mat })
    }

    pub fn dim(&self) -> usize {
        self.q.dim()
    }

    pub fn q(&self) -> &SymmetricMatrix {
        &self.q
    }

    pub fn n_mat(&self) -> &SymmetricMatrix {
        &self.n_mat
    }

    pub(crate) fn velocity_raw(&self, w: &DMatrix<f64>) -> DMatrix<f64> {
        iso_velocity_raw(self.q.as_matrix(), self.n_mat.as_matrix(), w)
    }
}

/// [WᵀQW, N] with the conjugated matrix symmetrized before the bracket, so
/// the output is exactly antisymmetric in floating point.
pub(crate) fn iso_velocity_raw(
    q: &DMatrix<f64>,
    n_mat: &DMatrix<f64>,
    w: &DMatrix<f64>,
) -> DMatrix<f64> {
    let conjugated = symmetrize_raw(&(w.transpose() * q * w));
    commutator_raw(&conjugated, n_mat)
}

/// Literal WᵀQW·N - N·WᵀQW without structural assumptions; used when the
/// parameters have been perturbed off their manifolds.
pub(crate) fn iso_velocity_ambient(
    q: &DMatrix<f64>,
    n_mat: &DMatrix<f64>,
    w: &DMatrix<f64>,
) -> DMatrix<f64> {
    let p = w.transpose() * q * w;
    &p * n_mat - n_mat * &p
}

/// ISO velocity at the given point of the orthogonal group.
pub fn iso_velocity(gen: &IsoGenerator, w: &OrthogonalMatrix) -> Result<SkewSymmetric> {
    if w.dim() != gen.dim() {
        return Err(Error::dimension(
            "iso_velocity",
            format!("{0}x{0}", gen.dim()),
            format!("{0}x{0}", w.dim()),
        ));
    }
    SkewSymmetric::new(gen.velocity_raw(w.as_matrix()))
}

/// One gate: a single-hidden-layer network from a sinusoidal time embedding
/// to an unstructured dim×dim matrix.
#[derive(Debug, Clone)]
pub struct GateNet {
    dim: usize,
    w1: DMatrix<f64>,
    b1: Vec<f64>,
    w2: DMatrix<f64>,
    b2: Vec<f64>,
}

/// Time-embedding width: sin and cos of four frequencies.
pub const TIME_EMBED_DIM: usize = 8;
/// Hidden width of each gate network.
pub const GATE_HIDDEN_DIM: usize = 32;

fn time_embedding(t: f64) -> [f64; TIME_EMBED_DIM] {
    let mut e = [0.0; TIME_EMBED_DIM];
    let mut freq = std::f64::consts::TAU;
    for k in 0..TIME_EMBED_DIM / 2 {
        e[2 * k] = (freq * t).sin();
        e[2 * k + 1] = (freq * t).cos();
        freq *= 2.0;
    }
    e
}

impl GateNet {
    /// Builds from explicit weights; `w1` is hidden×embed, `w2` is
    /// (dim·dim)×hidden.
    pub fn from_parts(
        dim: usize,
        w1: DMatrix<f64>,
        b1: Vec<f64>,
        w2: DMatrix<f64>,
        b2: Vec<f64>,
    ) -> Result<Self> {
        let hidden = w1.nrows();
        if w1.ncols() != TIME_EMBED_DIM
            || b1.len() != hidden
            || w2.nrows() != dim * dim
            || w2.ncols() != hidden
            || b2.len() != dim * dim
        {
            return Err(Error::dimension(
                "GateNet::from_parts",
                format!("({hidden}x{TIME_EMBED_DIM}, {hidden}, {}x{hidden}, {})", dim * dim, dim * dim),
                format!(
                    "({}x{}, {}, {}x{}, {})",
                    w1.nrows(),
                    w1.ncols(),
                    b1.len(),
                    w2.nrows(),
                    w2.ncols(),
                    b2.len()
                ),
            ));
        }
        Ok(GateNet { dim, w1, b1, w2, b2 })
    }

    fn random<R: Rng>(dim: usize, rng: &mut R) -> Self {
        let scale1 = 1.0 / (TIME_EMBED_DIM as f64).sqrt();
        let scale2 = 1.0 / (GATE_HIDDEN_DIM as f64).sqrt();
        GateNet {
            dim,
            w1: linalg::gaussian_matrix(GATE_HIDDEN_DIM, TIME_EMBED_DIM, rng) * scale1,
            b1: (0..GATE_HIDDEN_DIM).map(|_| 0.0).collect(),
            w2: linalg::gaussian_matrix(dim * dim, GATE_HIDDEN_DIM, rng) * scale2,
            b2: (0..dim * dim).map(|_| 0.0).collect(),
        }
    }

    /// Unstructured dim×dim output at time t.
    pub fn output(&self, t: f64) -> DMatrix<f64> {
        let embed = time_embedding(t);
        let hidden: Vec<f64> = (0..self.w1.nrows())
            .map(|i| {
                let mut acc = self.b1[i];
                for j in 0..TIME_EMBED_DIM {
                    acc += self.w1[(i, j)] * embed[j];
                }
                acc.tanh()
            })
            .collect();
        let mut flat = self.b2.clone();
        for (i, slot) in flat.iter_mut().enumerate() {
            for j in 0..hidden.len() {
                *slot += self.w2[(i, j)] * hidden[j];
            }
        }
        // row-major reshape to dim×dim
        DMatrix::from_fn(self.dim, self.dim, |i, j| flat[i * self.dim + j])
    }
}

/// Weighted sum of antisymmetrized gate outputs: Σ aᵢ (fᵢ(t) - fᵢ(t)ᵀ).
#[derive(Debug, Clone)]
pub struct GatedGenerator {
    dim: usize,
    coefficients: Vec<f64>,
    gates: Vec<GateNet>,
}

impl GatedGenerator {
    pub fn new(coefficients: Vec<f64>, gates: Vec<GateNet>) -> Result<Self> {
        if coefficients.is_empty() || coefficients.len() != gates.len() {
            return Err(Error::dimension(
                "GatedGenerator::new",
                format!("{} coefficients", gates.len().max(1)),
                format!("{}", coefficients.len()),
            ));
        }
        let dim = gates[0].dim;
        if gates.iter().any(|g| g.dim != dim) {
            return Err(Error::dimension(
                "GatedGenerator::new",
                "gates of equal output dimension",
                "mixed dimensions".to_string(),
            ));
        }
        Ok(GatedGenerator {
            dim,
            coefficients,
            gates,
        })
    }

    /// Seeded random generator with unit-scale coefficients.
    pub fn random(dim: usize, gate_count: usize, seed: u64) -> Self {
        assert!(gate_count >= 1, "gate_count must be at least 1");
        let mut rng = linalg::rng_from_seed(seed);
        let gates: Vec<GateNet> = (0..gate_count).map(|_| GateNet::random(dim, &mut rng)).collect();
        let coefficients = (0..gate_count)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        GatedGenerator {
            dim,
            coefficients,
            gates,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn gate_count(&self) -> usize {
        self.gates.len()
    }

    pub(crate) fn velocity_raw(&self, t: f64) -> DMatrix<f64> {
        let mut sum = DMatrix::zeros(self.dim, self.dim);
        for (a, gate) in self.coefficients.iter().zip(&self.gates) {
            if *a == 0.0 {
                continue;
            }
            sum += *a * crate::linalg::antisymmetrize_raw(&gate.output(t));
        }
        sum
    }
}

/// Gated velocity at time t; skew-symmetric by construction.
pub fn gated_velocity(gen: &GatedGenerator, t: f64) -> SkewSymmetric {
    SkewSymmetric::new(gen.velocity_raw(t)).expect("gated velocity is exactly skew")
}

/// Unconstrained weight function with trigonometric-polynomial entries:
/// W(t)[i,j] = Σₖ aᵏᵢⱼ sinᵏ(t) + bᵏᵢⱼ cosᵏ(t). Used only as a contrast
/// baseline; W(t) is NOT constrained to the orthogonal group.
#[derive(Debug, Clone)]
pub struct TrigBaselineGenerator {
    dim: usize,
    degree: usize,
    sin_coeffs: Vec<DMatrix<f64>>,
    cos_coeffs: Vec<DMatrix<f64>>,
}

impl TrigBaselineGenerator {
    pub fn new(
        sin_coeffs: Vec<DMatrix<f64>>,
        cos_coeffs: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        if sin_coeffs.is_empty() || sin_coeffs.len() != cos_coeffs.len() {
            return Err(Error::dimension(
                "TrigBaselineGenerator::new",
                "equal nonempty coefficient lists",
                format!("{} and {}", sin_coeffs.len(), cos_coeffs.len()),
            ));
        }
        let dim = sin_coeffs[0].nrows();
        for c in sin_coeffs.iter().chain(cos_coeffs.iter()) {
            if c.nrows() != dim || c.ncols() != dim {
                return Err(Error::dimension(
                    "TrigBaselineGenerator::new",
                    format!("{dim}x{dim} coefficient tensors"),
                    format!("{}x{}", c.nrows(), c.ncols()),
                ));
            }
        }
        Ok(TrigBaselineGenerator {
            dim,
            degree: sin_coeffs.len() - 1,
            sin_coeffs,
            cos_coeffs,
        })
    }

    pub fn random(dim: usize, degree: usize, scale: f64, seed: u64) -> Self {
        let mut rng = linalg::rng_from_seed(seed);
        let per_term = scale / (degree + 1) as f64;
        let mut gen_coeffs = |rng: &mut rand_chacha::ChaCha8Rng| {
            (0..=degree)
                .map(|_| linalg::gaussian_matrix(dim, dim, rng) * per_term)
                .collect::<Vec<_>>()
        };
        let sin_coeffs = gen_coeffs(&mut rng);
        let cos_coeffs = gen_coeffs(&mut rng);
        TrigBaselineGenerator {
            dim,
            degree,
            sin_coeffs,
            cos_coeffs,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    /// W(t), evaluated entrywise from the trigonometric polynomials.
    pub fn weight_at(&self, t: f64) -> DMatrix<f64> {
        let (s, c) = (t.sin(), t.cos());
        let mut w = DMatrix::zeros(self.dim, self.dim);
        let mut s_pow = 1.0;
        let mut c_pow = 1.0;
        for k in 0..=self.degree {
            w += &self.sin_coeffs[k] * s_pow + &self.cos_coeffs[k] * c_pow;
            s_pow *= s;
            c_pow *= c;
        }
        w
    }
}

/// A constrained generator choice for flows on the orthogonal group.
#[derive(Debug, Clone)]
pub enum Generator {
    Iso(IsoGenerator),
    Gated(GatedGenerator),
}

impl Generator {
    pub fn kind(&self) -> GeneratorKind {
        match self {
            Generator::Iso(_) => GeneratorKind::Iso,
            Generator::Gated(_) => GeneratorKind::Gated,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Generator::Iso(g) => g.dim(),
            Generator::Gated(g) => g.dim(),
        }
    }

    pub(crate) fn velocity_raw(&self, t: f64, w: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            Generator::Iso(g) => g.velocity_raw(w),
            Generator::Gated(g) => g.velocity_raw(t),
        }
    }
}
