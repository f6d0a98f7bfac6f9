//! Gaussian-smoothed evolution-strategies gradient estimation, Riemannian
//! projection, and the stochastic Riemannian gradient ascent loop.
//!
//! The smoothed objective is F_σ(θ) = E F(θ + σε) over standard normal ε;
//! its gradient admits the zeroth-order estimator (1/σv) Σ F(θ + σε_w) ε_w,
//! which needs only function evaluations. Perturbed parameters deliberately
//! leave the manifolds; the update step restores them by exponential-map
//! retraction of the projected gradient.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flows::{RawTheta, ThetaDims, ThetaParams};
use crate::grad::ThetaGradient;
use crate::linalg::{
    expm_skew, spectral_norm, symmetrize_raw, SkewSymmetric, StiefelMatrix, SymmetricMatrix,
};

/// Step-size schedule of the update loop: τ^{-0.5} for the convergence-trend
/// report, constant for plain training runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepSchedule {
    InverseSqrt,
    Constant(f64),
}

impl StepSchedule {
    /// Step size α_τ for 1-based iteration τ.
    pub fn rate(&self, iteration: usize) -> f64 {
        match self {
            StepSchedule::InverseSqrt => 1.0 / (iteration as f64).sqrt(),
            StepSchedule::Constant(v) => *v,
        }
    }
}

/// Estimator and update-loop configuration. Defaults: smoothing 0.1,
/// 200 perturbations, constant step 0.01.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ESConfig {
    pub sigma: f64,
    pub perturbations: usize,
    pub schedule: StepSchedule,
    /// Mirror each perturbation with its negation. Off by default: the plain
    /// i.i.d. estimator is the reference form.
    pub antithetic: bool,
    pub seed: u64,
}

impl Default for ESConfig {
    fn default() -> Self {
        ESConfig {
            sigma: 0.1,
            perturbations: 200,
            schedule: StepSchedule::Constant(0.01),
            antithetic: false,
            seed: 0,
        }
    }
}

impl ESConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!("sigma must be positive, got {}", self.sigma)));
        }
        if self.perturbations == 0 {
            return Err(Error::Config("perturbations must be at least 1".into()));
        }
        if self.antithetic && self.perturbations % 2 != 0 {
            return Err(Error::Config(
                "antithetic sampling needs an even perturbation count".into(),
            ));
        }
        if let StepSchedule::Constant(v) = self.schedule {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("step size must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Noise for perturbation `index` of round `round`: an independent
/// counter-derived stream, so the draw does not depend on evaluation order
/// or thread count. With antithetic sampling, odd indices mirror the
/// preceding even index.
fn perturbation_noise(cfg: &ESConfig, round: u64, index: usize, len: usize) -> DVector<f64> {
    debug_assert!(index < (1 << 24), "perturbation index exceeds stream space");
    if cfg.antithetic && index % 2 == 1 {
        return -perturbation_noise(cfg, round, index - 1, len);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream((round << 24) | (index as u64 + 1));
    DVector::from_fn(len, |_, _| rng.sample(StandardNormal))
}

/// Monte-Carlo estimate of ∇F_σ(θ) from `perturbations` objective
/// evaluations: (1/σv) Σ F(θ + σε_w) ε_w.
///
/// Evaluations run in parallel; the reduction always follows perturbation
/// index order, so the result is independent of thread count.
pub fn es_gradient<F>(
    evaluator: F,
    theta_flat: &[f64],
    cfg: &ESConfig,
    round: u64,
) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    cfg.validate()?;
    let len = theta_flat.len();
    let v = cfg.perturbations;

    let samples: Vec<(f64, DVector<f64>)> = (0..v)
        .into_par_iter()
        .map(|w| {
            let noise = perturbation_noise(cfg, round, w, len);
            let mut perturbed = theta_flat.to_vec();
            for (p, n) in perturbed.iter_mut().zip(noise.iter()) {
                *p += cfg.sigma * n;
            }
            (evaluator(&perturbed), noise)
        })
        .collect();

    let mut estimate = DVector::zeros(len);
    for (w, (value, noise)) in samples.iter().enumerate() {
        if !value.is_finite() {
            return Err(Error::Evaluator { index: w });
        }
        estimate += *value * noise;
    }
    estimate /= cfg.sigma * v as f64;
    Ok(estimate.iter().copied().collect())
}

/// Per-block Riemannian gradient: skew generators for the manifold blocks,
/// the symmetric parts for N and Q, and the bias verbatim.
#[derive(Debug, Clone)]
pub struct RiemannianGradient {
    pub omega1: SkewSymmetric,
    pub omega2: SkewSymmetric,
    pub bias: DVector<f64>,
    pub n_mat: SymmetricMatrix,
    pub q: SymmetricMatrix,
    pub w0: SkewSymmetric,
}

impl RiemannianGradient {
    pub fn zeros(dims: ThetaDims) -> Self {
        RiemannianGradient {
            omega1: SkewSymmetric::zeros(dims.hidden_dim),
            omega2: SkewSymmetric::zeros(dims.action_dim),
            bias: DVector::zeros(dims.hidden_dim),
            n_mat: SymmetricMatrix::zeros(dims.hidden_dim),
            q: SymmetricMatrix::zeros(dims.hidden_dim),
            w0: SkewSymmetric::zeros(dims.hidden_dim),
        }
    }

    /// Squared Frobenius norm over all blocks.
    pub fn norm_squared(&self) -> f64 {
        self.omega1.as_matrix().norm_squared()
            + self.omega2.as_matrix().norm_squared()
            + self.bias.norm_squared()
            + self.n_mat.as_matrix().norm_squared()
            + self.q.as_matrix().norm_squared()
            + self.w0.as_matrix().norm_squared()
    }
}

/// G·Xᵀ - X·Gᵀ accumulated so the result is exactly antisymmetric in
/// floating point.
fn skew_pairing(g: &DMatrix<f64>, x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = g.nrows();
    let k_len = g.ncols();
    DMatrix::from_fn(n, n, |i, j| {
        let mut gx = 0.0;
        let mut xg = 0.0;
        for k in 0..k_len {
            gx += g[(i, k)] * x[(j, k)];
            xg += x[(i, k)] * g[(j, k)];
        }
        gx - xg
    })
}

/// Projects ambient per-block gradients onto the tangent structure of θ:
/// A = ∇X·Xᵀ - X·∇Xᵀ for the Stiefel/orthogonal blocks, symmetrization for
/// N and Q, identity for the bias.
pub fn riemannian_project(
    euclid: &ThetaGradient,
    theta: &ThetaParams,
) -> Result<RiemannianGradient> {
    let dims = theta.dims();
    if euclid.dims() != dims {
        return Err(Error::dimension(
            "riemannian_project",
            format!("{:?}", dims),
            format!("{:?}", euclid.dims()),
        ));
    }
    Ok(RiemannianGradient {
        omega1: SkewSymmetric::new(skew_pairing(&euclid.omega1, theta.omega1.as_matrix()))?,
        omega2: SkewSymmetric::new(skew_pairing(&euclid.omega2, theta.omega2.as_matrix()))?,
        bias: euclid.bias.clone(),
        n_mat: SymmetricMatrix::new(symmetrize_raw(&euclid.n_mat))?,
        q: SymmetricMatrix::new(symmetrize_raw(&euclid.q))?,
        w0: SkewSymmetric::new(skew_pairing(&euclid.w0, theta.w0.as_matrix()))?,
    })
}

/// One ascent step along the Riemannian gradient with rate `alpha`:
/// exponential-map retraction Ω ← exp(α·A)·Ω for the manifold blocks,
/// additive updates for b, N and Q. Structure is preserved by construction;
/// a drift beyond tolerance is reported as an error rather than repaired.
pub fn srgd_step(
    theta: &ThetaParams,
    rgrad: &RiemannianGradient,
    alpha: f64,
) -> Result<ThetaParams> {
    assert!(alpha > 0.0 && alpha.is_finite(), "step rate must be positive");

    let rotate = |skew: &SkewSymmetric, point: &DMatrix<f64>| -> Result<DMatrix<f64>> {
        let rotation = expm_skew(&skew.scale(alpha))?;
        Ok(rotation.as_matrix() * point)
    };

    let omega1 = StiefelMatrix::new(rotate(&rgrad.omega1, theta.omega1.as_matrix())?)
        .map_err(drift_error)?;
    let omega2 = StiefelMatrix::new(rotate(&rgrad.omega2, theta.omega2.as_matrix())?)
        .map_err(drift_error)?;
    let w0 = crate::linalg::OrthogonalMatrix::new(rotate(&rgrad.w0, theta.w0.as_matrix())?)
        .map_err(drift_error)?;

    let bias = &theta.bias + alpha * &rgrad.bias;
    let n_mat = SymmetricMatrix::new(theta.n_mat.as_matrix() + alpha * rgrad.n_mat.as_matrix())?;
    let q = SymmetricMatrix::new(theta.q.as_matrix() + alpha * rgrad.q.as_matrix())?;

    ThetaParams::new(omega1, omega2, bias, n_mat, q, w0)
}

fn drift_error(err: Error) -> Error {
    match err {
        Error::Constraint { defect, .. } => Error::ManifoldDrift {
            defect,
            tolerance: 1e-8,
        },
        other => other,
    }
}

/// Norm conditions monitored during training: the convergence guarantee is
/// stated conditionally on ||N||₂, ||Q||₂ < D and ||b||₂ < D_b, so the
/// trainer flags violations without clamping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormBounds {
    pub d: f64,
    pub d_b: f64,
}

/// One iteration record of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub iteration: usize,
    pub objective: f64,
    /// ||∇̃_R F_σ||² of the estimate applied this iteration (0 for the
    /// initial record).
    pub rgrad_norm_sq: f64,
    pub running_min_rgrad_sq: f64,
    pub max_manifold_defect: f64,
    pub n_spectral_norm: f64,
    pub q_spectral_norm: f64,
    pub bias_norm: f64,
    pub bounds_exceeded: bool,
}

/// Full history of a training run, one record per iteration plus the
/// initial point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TrainingHistory {
    pub records: Vec<TrainingRecord>,
    pub wall_clock_ms: u128,
}

impl TrainingHistory {
    pub fn initial_objective(&self) -> f64 {
        self.records.first().map(|r| r.objective).unwrap_or(f64::NAN)
    }

    pub fn final_objective(&self) -> f64 {
        self.records.last().map(|r| r.objective).unwrap_or(f64::NAN)
    }
}

/// Maximizes a black-box objective of the flat parameters by iterating
/// estimate → project → retract, recording per-iteration diagnostics.
pub fn train_es<F>(
    objective: F,
    theta0: &ThetaParams,
    cfg: &ESConfig,
    iterations: usize,
    bounds: Option<NormBounds>,
) -> Result<TrainingHistory>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    cfg.validate()?;
    if iterations == 0 {
        return Err(Error::Config("iterations must be at least 1".into()));
    }
    let started = std::time::Instant::now();
    let dims = theta0.dims();
    let mut theta = theta0.clone();
    let mut history = TrainingHistory::default();
    let mut running_min = f64::INFINITY;

    let initial_objective = objective(&theta.flatten());
    if !initial_objective.is_finite() {
        return Err(Error::Training {
            iteration: 0,
            reason: "objective non-finite at the initial point".into(),
        });
    }
    history
        .records
        .push(record(0, initial_objective, 0.0, f64::INFINITY, &theta, bounds));

    for tau in 1..=iterations {
        let flat = theta.flatten();
        let grad_flat = es_gradient(&objective, &flat, cfg, tau as u64).map_err(|e| {
            Error::Training {
                iteration: tau,
                reason: e.to_string(),
            }
        })?;
        let euclid = ThetaGradient::from_flat(dims, &grad_flat)?;
        let rgrad = riemannian_project(&euclid, &theta)?;
        let rgrad_norm_sq = rgrad.norm_squared();
        running_min = running_min.min(rgrad_norm_sq);

        theta = srgd_step(&theta, &rgrad, cfg.schedule.rate(tau))?;

        let value = objective(&theta.flatten());
        if !value.is_finite() {
            return Err(Error::Training {
                iteration: tau,
                reason: "objective non-finite after update".into(),
            });
        }
        history
            .records
            .push(record(tau, value, rgrad_norm_sq, running_min, &theta, bounds));
    }
    history.wall_clock_ms = started.elapsed().as_millis();
    Ok(history)
}

fn record(
    iteration: usize,
    objective: f64,
    rgrad_norm_sq: f64,
    running_min: f64,
    theta: &ThetaParams,
    bounds: Option<NormBounds>,
) -> TrainingRecord {
    let n_spectral_norm = spectral_norm(theta.n_mat.as_matrix());
    let q_spectral_norm = spectral_norm(theta.q.as_matrix());
    let bias_norm = theta.bias.norm();
    let bounds_exceeded = bounds
        .map(|b| n_spectral_norm >= b.d || q_spectral_norm >= b.d || bias_norm >= b.d_b)
        .unwrap_or(false);
    TrainingRecord {
        iteration,
        objective,
        rgrad_norm_sq,
        running_min_rgrad_sq: if running_min.is_finite() { running_min } else { 0.0 },
        max_manifold_defect: theta.max_manifold_defect(),
        n_spectral_norm,
        q_spectral_norm,
        bias_norm,
        bounds_exceeded,
    }
}

/// Flat ambient coordinates of θ in the documented block order.
pub fn flatten(theta: &ThetaParams) -> Vec<f64> {
    theta.flatten()
}

/// Reassembles ambient parameters from flat coordinates without manifold
/// validation (perturbed points are evaluated off-manifold by design).
pub fn unflatten(dims: ThetaDims, flat: &[f64]) -> Result<RawTheta> {
    RawTheta::from_flat(dims, flat)
}

#[cfg(test)]
mod tests;
