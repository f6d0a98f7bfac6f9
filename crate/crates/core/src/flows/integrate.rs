//! Euler integration of the nested system: the matrix flow advances by
//! exponential-map retraction, the main flow by a residual step through the
//! current weight matrix.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::flows::config::{FlowConfig, Nonlinearity};
use crate::flows::generator::{
    iso_velocity_ambient, Generator, GeneratorKind, TrigBaselineGenerator,
};
use crate::flows::theta::{RawTheta, ThetaParams};
use crate::linalg::{expm, expm_skew, orthogonality_defect, OrthogonalMatrix, SkewSymmetric};

/// Per-step record of a discretized run, sufficient for exact reverse-mode
/// differentiation: states x_i, pre-activations z_i, weight matrices W_i,
/// and (for constrained flows) the skew velocities that produced them.
#[derive(Debug, Clone)]
pub struct FlowTape {
    pub kind: GeneratorKind,
    pub step: f64,
    pub nonlinearity: Nonlinearity,
    /// x_0 .. x_N.
    pub x: Vec<DVector<f64>>,
    /// z_1 .. z_N; z[i] is the pre-activation of step i+1.
    pub z: Vec<DVector<f64>>,
    /// W_0 .. W_N; for the trigonometric baseline, W_i is the weight used at
    /// step i and W_0 repeats W_1.
    pub w: Vec<DMatrix<f64>>,
    /// Velocities A_1 .. A_N of the matrix flow; empty for the baseline.
    pub velocity: Vec<DMatrix<f64>>,
}

impl FlowTape {
    pub fn depth(&self) -> usize {
        self.z.len()
    }

    pub fn state_dim(&self) -> usize {
        self.x[0].len()
    }

    pub fn x_final(&self) -> &DVector<f64> {
        &self.x[self.depth()]
    }

    /// Largest ||WᵢᵀWᵢ - I||_F over the stored trajectory.
    pub fn max_orthogonality_defect(&self) -> f64 {
        self.w
            .iter()
            .map(|w| orthogonality_defect(w))
            .fold(0.0, f64::max)
    }
}

/// Weight-matrix trajectory of a constrained flow, computed once per
/// parameter set. The matrix flow is independent of the main-flow state, so
/// one path serves every example or rollout state evaluated under the same
/// parameters.
#[derive(Debug, Clone)]
pub struct WeightPath {
    pub kind: GeneratorKind,
    pub step: f64,
    pub nonlinearity: Nonlinearity,
    /// W_0 .. W_N.
    pub w: Vec<DMatrix<f64>>,
    /// A_1 .. A_N.
    pub velocity: Vec<DMatrix<f64>>,
}

impl WeightPath {
    pub fn from_generator(
        w0: &OrthogonalMatrix,
        generator: &Generator,
        cfg: &FlowConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        if generator.dim() != w0.dim() {
            return Err(Error::dimension(
                "WeightPath::from_generator",
                format!("{0}x{0}", w0.dim()),
                format!("{0}x{0}", generator.dim()),
            ));
        }
        let depth = cfg.depth_steps;
        let mut w = Vec::with_capacity(depth + 1);
        let mut velocity = Vec::with_capacity(depth);
        w.push(w0.as_matrix().clone());
        for i in 1..=depth {
            let v = generator.velocity_raw(cfg.time_at(i), &w[i - 1]);
            let next = &w[i - 1] * expm(&(&v * cfg.step));
            velocity.push(v);
            w.push(next);
        }
        Ok(WeightPath {
            kind: generator.kind(),
            step: cfg.step,
            nonlinearity: cfg.nonlinearity,
            w,
            velocity,
        })
    }

    /// ISO path from θ's Q, N and W₀ blocks.
    pub fn from_theta(theta: &ThetaParams, cfg: &FlowConfig) -> Result<Self> {
        let generator = Generator::Iso(crate::flows::generator::IsoGenerator::new(
            theta.q.clone(),
            theta.n_mat.clone(),
        )?);
        Self::from_generator(&theta.w0, &generator, cfg)
    }

    pub fn depth(&self) -> usize {
        self.velocity.len()
    }

    pub fn dim(&self) -> usize {
        self.w[0].nrows()
    }

    /// Rolls the main flow along this path, returning (x_0..x_N, z_1..z_N).
    pub fn roll_states(
        &self,
        x0: &DVector<f64>,
        bias: Option<&DVector<f64>>,
    ) -> Result<(Vec<DVector<f64>>, Vec<DVector<f64>>)> {
        if x0.len() != self.dim() {
            return Err(Error::dimension(
                "WeightPath::roll_states",
                format!("state of dimension {}", self.dim()),
                format!("{}", x0.len()),
            ));
        }
        let depth = self.depth();
        let mut xs = Vec::with_capacity(depth + 1);
        let mut zs = Vec::with_capacity(depth);
        xs.push(x0.clone());
        for i in 1..=depth {
            let z = apply_step_weight(&self.w[i], &xs[i - 1], bias);
            let x_next = residual_step(&xs[i - 1], &z, self.step, self.nonlinearity);
            ensure_finite_state(&x_next, i)?;
            zs.push(z);
            xs.push(x_next);
        }
        Ok((xs, zs))
    }

    /// Assembles a full tape from rolled states (clones the path matrices).
    pub fn tape_for(&self, xs: Vec<DVector<f64>>, zs: Vec<DVector<f64>>) -> FlowTape {
        FlowTape {
            kind: self.kind,
            step: self.step,
            nonlinearity: self.nonlinearity,
            x: xs,
            z: zs,
            w: self.w.clone(),
            velocity: self.velocity.clone(),
        }
    }
}

/// One exponential-map step of the matrix flow: W · exp(eta·A). The result
/// stays on the group up to roundoff, so chained steps do not drift.
pub fn step_matrix_flow(
    w: &OrthogonalMatrix,
    velocity: &SkewSymmetric,
    eta: f64,
) -> Result<OrthogonalMatrix> {
    assert!(eta > 0.0 && eta.is_finite(), "step size must be positive");
    if w.dim() != velocity.dim() {
        return Err(Error::dimension(
            "step_matrix_flow",
            format!("{0}x{0}", w.dim()),
            format!("{0}x{0}", velocity.dim()),
        ));
    }
    let rotation = expm_skew(&velocity.scale(eta))?;
    OrthogonalMatrix::new(w.as_matrix() * rotation.as_matrix())
}

fn ensure_finite_state(x: &DVector<f64>, step: usize) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Integration { step })
    }
}

/// Integrates the nested flow from `x0`, recording the full tape.
///
/// The bias is optional: the core system has none, the policy network uses
/// one.
pub fn forward(
    x0: &DVector<f64>,
    w0: &OrthogonalMatrix,
    generator: &Generator,
    bias: Option<&DVector<f64>>,
    cfg: &FlowConfig,
) -> Result<FlowTape> {
    cfg.validate()?;
    let n = w0.dim();
    if x0.len() != n || generator.dim() != n {
        return Err(Error::dimension(
            "forward",
            format!("state and generator of dimension {n}"),
            format!("state {}, generator {}", x0.len(), generator.dim()),
        ));
    }
    if let Some(b) = bias {
        if b.len() != n {
            return Err(Error::dimension(
                "forward",
                format!("bias of dimension {n}"),
                format!("{}", b.len()),
            ));
        }
    }

    let path = WeightPath::from_generator(w0, generator, cfg)?;
    let (xs, zs) = path.roll_states(x0, bias)?;
    Ok(path.tape_for(xs, zs))
}

/// Convenience wrapper: ISO flow parameterized by θ's Q, N and W₀ blocks.
pub fn forward_theta(
    x0: &DVector<f64>,
    theta: &ThetaParams,
    cfg: &FlowConfig,
) -> Result<FlowTape> {
    let generator = Generator::Iso(crate::flows::generator::IsoGenerator::new(
        theta.q.clone(),
        theta.n_mat.clone(),
    )?);
    forward(x0, &theta.w0, &generator, Some(&theta.bias), cfg)
}

fn apply_step_weight(
    w: &DMatrix<f64>,
    x: &DVector<f64>,
    bias: Option<&DVector<f64>>,
) -> DVector<f64> {
    let mut z = w * x;
    if let Some(b) = bias {
        z += b;
    }
    z
}

fn residual_step(
    x: &DVector<f64>,
    z: &DVector<f64>,
    eta: f64,
    nonlinearity: Nonlinearity,
) -> DVector<f64> {
    let mut next = x.clone();
    for i in 0..x.len() {
        next[i] += eta * nonlinearity.apply(z[i]);
    }
    next
}

/// Policy evaluation g(s) = Ω₂ x_N with x₀ = Ω₁ s, via the full tape.
pub fn policy_forward(
    s: &DVector<f64>,
    theta: &ThetaParams,
    cfg: &FlowConfig,
) -> Result<DVector<f64>> {
    let dims = theta.dims();
    if s.len() != dims.state_dim {
        return Err(Error::dimension(
            "policy_forward",
            format!("state of dimension {}", dims.state_dim),
            format!("{}", s.len()),
        ));
    }
    let x0 = theta.omega1.as_matrix() * s;
    let tape = forward_theta(&x0, theta, cfg)?;
    Ok(theta.omega2.as_matrix() * tape.x_final())
}

/// Precomputed weight-matrix trajectory of a policy. The matrix flow depends
/// only on θ, so one plan serves every state queried during a rollout.
#[derive(Debug, Clone)]
pub struct PolicyPlan {
    omega1: DMatrix<f64>,
    omega2: DMatrix<f64>,
    bias: DVector<f64>,
    /// W_1 .. W_N.
    weights: Vec<DMatrix<f64>>,
    step: f64,
    nonlinearity: Nonlinearity,
}

impl PolicyPlan {
    /// Builds the weight trajectory from ambient parameters, applying the
    /// rollout recursion verbatim (no structural assumptions).
    pub fn from_raw(theta: &RawTheta, cfg: &FlowConfig) -> Result<Self> {
        cfg.validate()?;
        let mut weights = Vec::with_capacity(cfg.depth_steps);
        let mut w_prev = theta.w0.clone();
        for i in 1..=cfg.depth_steps {
            let velocity = iso_velocity_ambient(&theta.q, &theta.n_mat, &w_prev);
            let w_next = &w_prev * expm(&(velocity * cfg.step));
            if w_next.iter().any(|v| !v.is_finite()) {
                return Err(Error::Integration { step: i });
            }
            weights.push(w_next.clone());
            w_prev = w_next;
        }
        Ok(PolicyPlan {
            omega1: theta.omega1.clone(),
            omega2: theta.omega2.clone(),
            bias: theta.bias.clone(),
            weights,
            step: cfg.step,
            nonlinearity: cfg.nonlinearity,
        })
    }

    pub fn from_theta(theta: &ThetaParams, cfg: &FlowConfig) -> Result<Self> {
        Self::from_raw(&theta.to_raw(), cfg)
    }

    /// g(s) = Ω₂ x_N.
    pub fn act(&self, s: &DVector<f64>) -> Result<DVector<f64>> {
        if s.len() != self.omega1.ncols() {
            return Err(Error::dimension(
                "PolicyPlan::act",
                format!("state of dimension {}", self.omega1.ncols()),
                format!("{}", s.len()),
            ));
        }
        let mut x = &self.omega1 * s;
        for (i, w) in self.weights.iter().enumerate() {
            let z = w * &x + &self.bias;
            x = residual_step(&x, &z, self.step, self.nonlinearity);
            ensure_finite_state(&x, i + 1)?;
        }
        Ok(&self.omega2 * x)
    }
}

/// Euler integration of the unconstrained baseline flow
/// dx/dt = f(W(t)·x); the weight matrix comes straight from the
/// trigonometric polynomials and is not retracted to any manifold.
pub fn trig_baseline_forward(
    x0: &DVector<f64>,
    generator: &TrigBaselineGenerator,
    cfg: &FlowConfig,
) -> Result<FlowTape> {
    cfg.validate()?;
    if x0.len() != generator.dim() {
        return Err(Error::dimension(
            "trig_baseline_forward",
            format!("state of dimension {}", generator.dim()),
            format!("{}", x0.len()),
        ));
    }
    let depth = cfg.depth_steps;
    let mut tape = FlowTape {
        kind: GeneratorKind::TrigBaseline,
        step: cfg.step,
        nonlinearity: cfg.nonlinearity,
        x: Vec::with_capacity(depth + 1),
        z: Vec::with_capacity(depth),
        w: Vec::with_capacity(depth + 1),
        velocity: Vec::new(),
    };
    tape.x.push(x0.clone());
    tape.w.push(generator.weight_at(0.0));
    for i in 1..=depth {
        let w_i = generator.weight_at(cfg.time_at(i));
        let z = apply_step_weight(&w_i, &tape.x[i - 1], None);
        let x_next = residual_step(&tape.x[i - 1], &z, cfg.step, cfg.nonlinearity);
        ensure_finite_state(&x_next, i)?;
        tape.w.push(w_i);
        tape.z.push(z);
        tape.x.push(x_next);
    }
    Ok(tape)
}

/// Theoretical gradient-ratio interval [(1-η)^N, (1+η)^N] for a depth-N flow
/// with step η, orthogonal weights and unit-derivative nonlinearity. At the
/// default unit horizon this is [(1-1/N)^N, (1+1/N)^N], approaching
/// [1/e, e] from inside as N grows.
pub fn gradient_ratio_bounds(depth_steps: usize, step: f64) -> (f64, f64) {
    let n = depth_steps as i32;
    let lower = (1.0 - step).max(0.0).powi(n);
    let upper = (1.0 + step).powi(n);
    (lower, upper)
}
