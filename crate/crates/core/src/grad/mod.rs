//! Exact reverse-mode differentiation through the discretized nested flow.
//!
//! The activation recursion applies the transposed per-step Jacobian
//! (I + η·diag(f'(z_i))·W_i)ᵀ, which is the correct vector–Jacobian product
//! for column gradients; because spectral norms are transpose-invariant this
//! has the same ratio bounds as the untransposed product. Parameter
//! gradients flow through the exponential-map retraction via the Fréchet
//! derivative: the adjoint of E ↦ L(S, E) is G ↦ L(Sᵀ, G), evaluated with
//! the same block-matrix code path as the forward exponential.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::flows::{
    FlowConfig, FlowTape, GeneratorKind, Nonlinearity, PolicyPlan, RawTheta, ThetaParams,
    WeightPath,
};
use crate::linalg::expm_frechet_raw;

mod theta_grad;
pub use theta_grad::ThetaGradient;

/// Loss gradients with respect to every intermediate activation, g_i =
/// ∂L/∂x_i for i = 0..N.
#[derive(Debug, Clone)]
pub struct ActivationGradients {
    values: Vec<DVector<f64>>,
}

impl ActivationGradients {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, i: usize) -> &DVector<f64> {
        &self.values[i]
    }

    pub fn terminal(&self) -> &DVector<f64> {
        self.values.last().expect("gradients are nonempty")
    }

    pub fn iter(&self) -> impl Iterator<Item = &DVector<f64>> {
        self.values.iter()
    }
}

fn gate_elementwise(z: &DVector<f64>, g: &DVector<f64>, nonlinearity: Nonlinearity) -> DVector<f64> {
    DVector::from_fn(z.len(), |i, _| nonlinearity.derivative(z[i]) * g[i])
}

/// Core recursion g_{i-1} = g_i + η·W_iᵀ·(f'(z_i) ⊙ g_i); `ws` holds
/// W_0..W_N, `zs` holds z_1..z_N.
fn backward_recursion(
    ws: &[DMatrix<f64>],
    zs: &[DVector<f64>],
    step: f64,
    nonlinearity: Nonlinearity,
    grad_final: &DVector<f64>,
) -> Vec<DVector<f64>> {
    let depth = zs.len();
    let mut values = vec![DVector::zeros(grad_final.len()); depth + 1];
    values[depth] = grad_final.clone();
    for i in (1..=depth).rev() {
        let gated = gate_elementwise(&zs[i - 1], &values[i], nonlinearity);
        values[i - 1] = &values[i] + step * (ws[i].transpose() * gated);
    }
    values
}

/// Backpropagates `grad_final` = ∂L/∂x_N through the tape.
pub fn activation_gradients(
    tape: &FlowTape,
    grad_final: &DVector<f64>,
) -> Result<ActivationGradients> {
    check_grad_seed(tape.state_dim(), grad_final)?;
    Ok(ActivationGradients {
        values: backward_recursion(&tape.w, &tape.z, tape.step, tape.nonlinearity, grad_final),
    })
}

/// Same recursion over a shared weight path and per-example pre-activations.
pub fn activation_gradients_on_path(
    path: &WeightPath,
    zs: &[DVector<f64>],
    grad_final: &DVector<f64>,
) -> Result<ActivationGradients> {
    check_grad_seed(path.dim(), grad_final)?;
    Ok(ActivationGradients {
        values: backward_recursion(&path.w, zs, path.step, path.nonlinearity, grad_final),
    })
}

fn check_grad_seed(dim: usize, grad_final: &DVector<f64>) -> Result<()> {
    if grad_final.len() != dim {
        return Err(Error::dimension(
            "activation_gradients",
            format!("gradient of dimension {dim}"),
            format!("{}", grad_final.len()),
        ));
    }
    if !grad_final.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite {
            context: "activation_gradients",
        });
    }
    Ok(())
}

/// Ratios r_i = ||g_i|| / ||g_N|| for i = 0..N. For constrained flows with
/// unit-derivative nonlinearities every ratio lies in the interval given by
/// [`crate::flows::gradient_ratio_bounds`].
pub fn gradient_ratio_profile(grads: &ActivationGradients) -> Result<Vec<f64>> {
    let terminal_norm = grads.terminal().norm();
    if terminal_norm == 0.0 {
        return Err(Error::ZeroTerminalGradient);
    }
    Ok(grads.iter().map(|g| g.norm() / terminal_norm).collect())
}

/// Forward pass of the policy with the intermediate record needed for exact
/// parameter gradients: the input state, the flow tape, and the action.
#[derive(Debug, Clone)]
pub struct PolicyTape {
    pub input: DVector<f64>,
    pub flow: FlowTape,
    pub action: DVector<f64>,
}

/// Runs g(s) = Ω₂ x_N with x₀ = Ω₁ s and keeps the tape.
pub fn policy_forward_tape(
    s: &DVector<f64>,
    theta: &ThetaParams,
    cfg: &FlowConfig,
) -> Result<PolicyTape> {
    let dims = theta.dims();
    if s.len() != dims.state_dim {
        return Err(Error::dimension(
            "policy_forward_tape",
            format!("state of dimension {}", dims.state_dim),
            format!("{}", s.len()),
        ));
    }
    let x0 = theta.omega1.as_matrix() * s;
    let flow = crate::flows::forward_theta(&x0, theta, cfg)?;
    let action = theta.omega2.as_matrix() * flow.x_final();
    Ok(PolicyTape {
        input: s.clone(),
        flow,
        action,
    })
}

/// Like [`policy_forward_tape`] but with an explicit generator, so the same
/// record works for gated flows (whose gate networks are fixed features, not
/// θ blocks).
pub fn policy_forward_tape_with(
    s: &DVector<f64>,
    theta: &ThetaParams,
    generator: &crate::flows::Generator,
    cfg: &FlowConfig,
) -> Result<PolicyTape> {
    let x0 = theta.omega1.as_matrix() * s;
    let flow = crate::flows::forward(&x0, &theta.w0, generator, Some(&theta.bias), cfg)?;
    let action = theta.omega2.as_matrix() * flow.x_final();
    Ok(PolicyTape {
        input: s.clone(),
        flow,
        action,
    })
}

/// One training example's forward record over a shared weight path.
#[derive(Debug, Clone)]
pub struct BatchExample<'a> {
    pub input: &'a DVector<f64>,
    /// x_0 .. x_N.
    pub xs: &'a [DVector<f64>],
    /// z_1 .. z_N.
    pub zs: &'a [DVector<f64>],
    /// ∂L/∂action for this example.
    pub grad_action: &'a DVector<f64>,
}

struct PathView<'a> {
    ws: &'a [DMatrix<f64>],
    velocities: &'a [DMatrix<f64>],
    kind: GeneratorKind,
    step: f64,
    nonlinearity: Nonlinearity,
}

impl<'a> From<&'a WeightPath> for PathView<'a> {
    fn from(p: &'a WeightPath) -> Self {
        PathView {
            ws: &p.w,
            velocities: &p.velocity,
            kind: p.kind,
            step: p.step,
            nonlinearity: p.nonlinearity,
        }
    }
}

impl<'a> From<&'a FlowTape> for PathView<'a> {
    fn from(t: &'a FlowTape) -> Self {
        PathView {
            ws: &t.w,
            velocities: &t.velocity,
            kind: t.kind,
            step: t.step,
            nonlinearity: t.nonlinearity,
        }
    }
}

/// Euclidean (pre-projection) gradients of a loss L with respect to every
/// θ block, given ∂L/∂action.
///
/// The weight-matrix recursion contributes to ∇Q, ∇N and ∇W₀ at every step;
/// those terms are accumulated by running the chain W_i = W_{i-1}·exp(η A_i)
/// backwards with the Fréchet-derivative adjoint. For gated tapes the step
/// rotations do not depend on θ, so only the left-multiplication chain to
/// W₀ remains and ∇Q = ∇N = 0.
pub fn parameter_gradients(
    tape: &PolicyTape,
    theta: &ThetaParams,
    grad_action: &DVector<f64>,
) -> Result<ThetaGradient> {
    let example = BatchExample {
        input: &tape.input,
        xs: &tape.flow.x,
        zs: &tape.flow.z,
        grad_action,
    };
    param_grads_core(PathView::from(&tape.flow), theta, std::slice::from_ref(&example))
}

/// Summed θ gradients of a batch of examples sharing one weight path. The
/// expensive exponential-map adjoints run once per step, not once per
/// example, because the per-step direct adjoints are linear in the examples.
pub fn parameter_gradients_batch(
    path: &WeightPath,
    theta: &ThetaParams,
    examples: &[BatchExample<'_>],
) -> Result<ThetaGradient> {
    param_grads_core(PathView::from(path), theta, examples)
}

fn param_grads_core(
    view: PathView<'_>,
    theta: &ThetaParams,
    examples: &[BatchExample<'_>],
) -> Result<ThetaGradient> {
    let dims = theta.dims();
    let depth = view.velocities.len();
    let eta = view.step;
    let hidden = dims.hidden_dim;
    if view.ws[0].nrows() != hidden {
        return Err(Error::dimension(
            "parameter_gradients",
            format!("path of hidden dimension {hidden}"),
            format!("{}", view.ws[0].nrows()),
        ));
    }
    if matches!(view.kind, GeneratorKind::TrigBaseline) {
        return Err(Error::Config(
            "parameter gradients are defined for constrained tapes only".into(),
        ));
    }

    let mut grad = ThetaGradient::zeros(dims);
    // direct adjoints of W_i, summed over examples
    let mut direct: Vec<DMatrix<f64>> = vec![DMatrix::zeros(hidden, hidden); depth];

    for example in examples {
        if example.grad_action.len() != dims.action_dim
            || example.input.len() != dims.state_dim
            || example.zs.len() != depth
        {
            return Err(Error::dimension(
                "parameter_gradients",
                format!(
                    "example matching dims ({}, {}, {}) and depth {depth}",
                    dims.state_dim, dims.hidden_dim, dims.action_dim
                ),
                format!(
                    "input {}, action grad {}, depth {}",
                    example.input.len(),
                    example.grad_action.len(),
                    example.zs.len()
                ),
            ));
        }
        let x_final = &example.xs[depth];
        grad.omega2 += example.grad_action * x_final.transpose();

        let grad_final = theta.omega2.as_matrix().transpose() * example.grad_action;
        let activations =
            backward_recursion(view.ws, example.zs, eta, view.nonlinearity, &grad_final);

        for i in 1..=depth {
            let gated = gate_elementwise(&example.zs[i - 1], &activations[i], view.nonlinearity);
            grad.bias += eta * &gated;
            direct[i - 1] += eta * &gated * example.xs[i - 1].transpose();
        }
        grad.omega1 += &activations[0] * example.input.transpose();
    }

    match view.kind {
        GeneratorKind::Iso => accumulate_iso_chain(&view, theta, &direct, &mut grad),
        GeneratorKind::Gated => accumulate_left_chain(&view, &direct, &mut grad),
        GeneratorKind::TrigBaseline => unreachable!("rejected above"),
    }
    Ok(grad)
}

/// Reverse accumulation through W_i = W_{i-1}·exp(η·[W_{i-1}ᵀQW_{i-1}, N]).
fn accumulate_iso_chain(
    view: &PathView<'_>,
    theta: &ThetaParams,
    direct: &[DMatrix<f64>],
    grad: &mut ThetaGradient,
) {
    let depth = direct.len();
    let eta = view.step;
    let q = theta.q.as_matrix();
    let n_mat = theta.n_mat.as_matrix();

    let mut upstream = direct[depth - 1].clone();
    for i in (1..=depth).rev() {
        let w_prev = &view.ws[i - 1];
        let step_gen = eta * &view.velocities[i - 1];

        // adjoint of M = exp(S): ∂L/∂S = L(Sᵀ, ∂L/∂M); for skew S the value
        // block of the same call is exp(-S) = Mᵀ.
        let grad_m = w_prev.transpose() * &upstream;
        let (m_transposed, adj_s) = expm_frechet_raw(&step_gen.transpose(), &grad_m);
        let grad_a = eta * adj_s;

        // A = P·N - N·P with P = WᵀQW
        let p = w_prev.transpose() * q * w_prev;
        let grad_p = &grad_a * n_mat.transpose() - n_mat.transpose() * &grad_a;
        grad.n_mat += p.transpose() * &grad_a - &grad_a * p.transpose();
        grad.q += w_prev * &grad_p * w_prev.transpose();

        let mut next = &upstream * &m_transposed
            + q * w_prev * grad_p.transpose()
            + q.transpose() * w_prev * &grad_p;
        if i >= 2 {
            next += &direct[i - 2];
        }
        upstream = next;
    }
    grad.w0 = upstream;
}

/// Reverse accumulation when step rotations are parameter-free: only the
/// left factor chains back to W₀.
fn accumulate_left_chain(view: &PathView<'_>, direct: &[DMatrix<f64>], grad: &mut ThetaGradient) {
    let depth = direct.len();
    let eta = view.step;
    let mut upstream = direct[depth - 1].clone();
    for i in (1..=depth).rev() {
        let rotation = crate::linalg::expm(&(eta * &view.velocities[i - 1]));
        let mut next = &upstream * rotation.transpose();
        if i >= 2 {
            next += &direct[i - 2];
        }
        upstream = next;
    }
    grad.w0 = upstream;
}

/// Central finite differences of `loss` over the flat ambient coordinates:
/// (loss(x + h·e_j) - loss(x - h·e_j)) / 2h per coordinate.
///
/// Differences are taken in the ambient space, so this checks Euclidean
/// gradients before any manifold projection.
pub fn finite_difference_flat<F>(loss: F, flat: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64,
{
    assert!(h > 0.0, "finite-difference step must be positive");
    let mut grad = Vec::with_capacity(flat.len());
    let mut work = flat.to_vec();
    for j in 0..flat.len() {
        let original = work[j];
        work[j] = original + h;
        let plus = loss(&work);
        work[j] = original - h;
        let minus = loss(&work);
        work[j] = original;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite {
                context: "finite_difference_flat",
            });
        }
        grad.push((plus - minus) / (2.0 * h));
    }
    Ok(grad)
}

/// Finite-difference θ gradient of a loss defined over ambient parameters.
pub fn finite_difference_gradient<F>(
    loss: F,
    theta: &ThetaParams,
    h: f64,
) -> Result<ThetaGradient>
where
    F: Fn(&RawTheta) -> f64,
{
    let dims = theta.dims();
    let flat = theta.flatten();
    let grad_flat = finite_difference_flat(
        |coords| {
            let raw = RawTheta::from_flat(dims, coords).expect("flat length is fixed");
            loss(&raw)
        },
        &flat,
        h,
    )?;
    ThetaGradient::from_flat(dims, &grad_flat)
}

/// Rollout-free scalar loss of the policy output against fixed weights;
/// shared by the finite-difference tests and the acceptance suite.
pub fn quadratic_action_loss(
    raw: &RawTheta,
    s: &DVector<f64>,
    linear: &DVector<f64>,
    cfg: &FlowConfig,
) -> f64 {
    let plan = PolicyPlan::from_raw(raw, cfg).expect("plan builds for finite parameters");
    let action = plan.act(s).expect("action evaluates for finite parameters");
    linear.dot(&action) + 0.5 * action.norm_squared()
}

/// Gradient of [`quadratic_action_loss`] with respect to the action.
pub fn quadratic_action_loss_grad(action: &DVector<f64>, linear: &DVector<f64>) -> DVector<f64> {
    linear + action
}

/// True when every pre-activation of the tape is safely away from the |x|
/// kink, so finite differences are trustworthy.
pub fn tape_clear_of_kinks(tape: &FlowTape, margin: f64) -> bool {
    tape.z.iter().all(|z| z.iter().all(|v| v.abs() > margin))
}

#[cfg(test)]
mod tests;
