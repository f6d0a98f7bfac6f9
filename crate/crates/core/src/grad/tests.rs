use nalgebra::{DMatrix, DVector};
use rand::RngCore;

use super::*;
use crate::flows::{
    forward, forward_theta, gradient_ratio_bounds, FlowConfig, GatedGenerator, Generator,
    IsoGenerator, Nonlinearity, ThetaParams,
};
use crate::linalg::{self, OrthogonalMatrix, StiefelMatrix, SymmetricMatrix};

fn scalar_theta() -> ThetaParams {
    let one = DMatrix::from_element(1, 1, 1.0);
    ThetaParams::new(
        StiefelMatrix::new(one.clone()).unwrap(),
        StiefelMatrix::new(one.clone()).unwrap(),
        DVector::zeros(1),
        SymmetricMatrix::new(one.clone()).unwrap(),
        SymmetricMatrix::new(one.clone()).unwrap(),
        OrthogonalMatrix::new(one).unwrap(),
    )
    .unwrap()
}

fn frozen_flow_theta(dim: usize) -> ThetaParams {
    // zero generator matrices: W_i = I for every step
    ThetaParams::new(
        StiefelMatrix::new(DMatrix::identity(dim, dim)).unwrap(),
        StiefelMatrix::new(DMatrix::identity(dim, dim)).unwrap(),
        DVector::zeros(dim),
        SymmetricMatrix::zeros(dim),
        SymmetricMatrix::zeros(dim),
        OrthogonalMatrix::identity(dim),
    )
    .unwrap()
}

#[test]
fn one_step_scalar_gradient() {
    let theta = scalar_theta();
    let cfg = FlowConfig::with_depth(1, Nonlinearity::Identity).unwrap();
    let tape = forward_theta(&DVector::from_element(1, 1.0), &theta, &cfg).unwrap();
    let grads = activation_gradients(&tape, &DVector::from_element(1, 1.0)).unwrap();
    assert_eq!(grads.get(0)[0], 2.0);
    assert_eq!(grads.get(1)[0], 1.0);
}

#[test]
fn identity_weights_scale_geometrically() {
    let theta = frozen_flow_theta(3);
    let depth = 40;
    let cfg = FlowConfig::with_depth(depth, Nonlinearity::Identity).unwrap();
    let x0 = DVector::from_vec(vec![0.3, -0.7, 1.1]);
    let tape = forward_theta(&x0, &theta, &cfg).unwrap();
    let g_final = DVector::from_vec(vec![1.0, 2.0, -0.5]);
    let grads = activation_gradients(&tape, &g_final).unwrap();
    let eta = cfg.step;
    for i in 0..=depth {
        let factor = (1.0 + eta).powi((depth - i) as i32);
        for k in 0..3 {
            let expected = factor * g_final[k];
            assert!((grads.get(i)[k] - expected).abs() < 1e-12 * expected.abs().max(1.0));
        }
    }
}

#[test]
fn zero_terminal_gradient_propagates_zeros() {
    let theta = ThetaParams::random(crate::flows::ThetaDims::new(3, 5, 2), 1.0, 0.2, 90);
    let cfg = FlowConfig::default();
    let tape = forward_theta(&DVector::from_element(5, 0.4), &theta, &cfg).unwrap();
    let grads = activation_gradients(&tape, &DVector::zeros(5)).unwrap();
    for g in grads.iter() {
        assert!(g.amax() == 0.0);
    }
}

#[test]
fn backward_pass_is_linear_in_terminal_gradient() {
    let theta = ThetaParams::random(crate::flows::ThetaDims::new(3, 6, 2), 1.5, 0.3, 91);
    let cfg = FlowConfig::default();
    let mut rng = linalg::rng_from_seed(92);
    let tape = forward_theta(&linalg::gaussian_vector(6, &mut rng), &theta, &cfg).unwrap();
    let ga = linalg::gaussian_vector(6, &mut rng);
    let gb = linalg::gaussian_vector(6, &mut rng);
    let (alpha, beta) = (0.7, -1.3);
    let combined = activation_gradients(&tape, &(alpha * &ga + beta * &gb)).unwrap();
    let eval_a = activation_gradients(&tape, &ga).unwrap();
    let eval_b = activation_gradients(&tape, &gb).unwrap();
    for i in 0..combined.len() {
        let expected = alpha * eval_a.get(i) + beta * eval_b.get(i);
        let diff = (combined.get(i) - &expected).norm();
        assert!(diff <= 1e-12 * expected.norm().max(1.0));
    }
}

#[test]
fn ratio_profile_terminal_is_one_and_zero_rejected() {
    let theta = ThetaParams::random(crate::flows::ThetaDims::new(3, 4, 2), 1.0, 0.1, 93);
    let cfg = FlowConfig::default();
    let tape = forward_theta(&DVector::from_element(4, 0.5), &theta, &cfg).unwrap();
    let grads = activation_gradients(&tape, &DVector::from_element(4, 0.25)).unwrap();
    let ratios = gradient_ratio_profile(&grads).unwrap();
    assert_eq!(ratios[ratios.len() - 1], 1.0);

    let zeros = activation_gradients(&tape, &DVector::zeros(4)).unwrap();
    assert!(matches!(
        gradient_ratio_profile(&zeros),
        Err(crate::Error::ZeroTerminalGradient)
    ));
}

#[test]
fn ratios_respect_finite_depth_bounds_deep_iso() {
    let dim = 16;
    let depth = 1000;
    let mut rng = linalg::rng_from_seed(94);
    let gen = Generator::Iso(
        IsoGenerator::new(
            linalg::random_symmetric(dim, 2.0, &mut rng),
            linalg::random_symmetric(dim, 2.0, &mut rng),
        )
        .unwrap(),
    );
    let w0 = linalg::haar_orthogonal_with(dim, &mut rng);
    let x0 = linalg::gaussian_vector(dim, &mut rng);
    let cfg = FlowConfig::with_depth(depth, Nonlinearity::Abs).unwrap();
    let tape = forward(&x0, &w0, &gen, None, &cfg).unwrap();
    let grads = activation_gradients(&tape, &linalg::random_unit_vector(dim, &mut rng)).unwrap();
    let ratios = gradient_ratio_profile(&grads).unwrap();
    let (lo, hi) = gradient_ratio_bounds(depth, cfg.step);
    for r in ratios {
        assert!(r >= lo - 1e-9 && r <= hi + 1e-9, "ratio {r} outside [{lo}, {hi}]");
    }
}

fn assert_blocks_match(analytic: &ThetaGradient, oracle: &ThetaGradient) {
    for ((name, a), (_, o)) in analytic.blocks().iter().zip(oracle.blocks().iter()) {
        let denom = o.norm().max(a.norm());
        let diff = (*a - *o).norm();
        assert!(
            diff <= (1e-4 * denom).max(1e-7),
            "{name}: |analytic - fd| = {diff:.3e}, scale {denom:.3e}"
        );
    }
    let denom = oracle.bias.norm().max(analytic.bias.norm());
    let diff = (&analytic.bias - &oracle.bias).norm();
    assert!(
        diff <= (1e-4 * denom).max(1e-7),
        "bias: |analytic - fd| = {diff:.3e}, scale {denom:.3e}"
    );
}

fn fd_check_iso(nonlinearity: Nonlinearity, seed: u64) {
    let dims = crate::flows::ThetaDims::new(4, 6, 2);
    let cfg = FlowConfig {
        depth_steps: 10,
        horizon: 1.0,
        step: 0.1,
        nonlinearity,
    };
    let mut rng = linalg::rng_from_seed(seed);
    // resample until every pre-activation is clear of the |x| kink
    let (theta, s, tape) = loop {
        let theta = ThetaParams::random(dims, 1.5, 0.4, rng.next_u64());
        let s = linalg::gaussian_vector(4, &mut rng);
        let tape = policy_forward_tape(&s, &theta, &cfg).unwrap();
        if nonlinearity == Nonlinearity::Identity || tape_clear_of_kinks(&tape.flow, 1e-3) {
            break (theta, s, tape);
        }
    };
    let linear = linalg::gaussian_vector(2, &mut rng);

    let grad_action = quadratic_action_loss_grad(&tape.action, &linear);
    let analytic = parameter_gradients(&tape, &theta, &grad_action).unwrap();

    let oracle = finite_difference_gradient(
        |raw| quadratic_action_loss(raw, &s, &linear, &cfg),
        &theta,
        1e-5,
    )
    .unwrap();
    assert_blocks_match(&analytic, &oracle);
}

#[test]
fn parameter_gradients_match_fd_identity() {
    fd_check_iso(Nonlinearity::Identity, 100);
}

#[test]
fn parameter_gradients_match_fd_abs() {
    fd_check_iso(Nonlinearity::Abs, 101);
}

#[test]
fn zero_action_gradient_gives_zero_theta_gradient() {
    let dims = crate::flows::ThetaDims::new(3, 5, 2);
    let theta = ThetaParams::random(dims, 1.0, 0.2, 102);
    let cfg = FlowConfig::default();
    let tape = policy_forward_tape(&DVector::from_element(3, 0.7), &theta, &cfg).unwrap();
    let grad = parameter_gradients(&tape, &theta, &DVector::zeros(2)).unwrap();
    assert_eq!(grad.norm_squared(), 0.0);
}

#[test]
fn gated_parameter_gradients_match_fd() {
    let dims = crate::flows::ThetaDims::new(3, 4, 2);
    let cfg = FlowConfig {
        depth_steps: 8,
        horizon: 1.0,
        step: 0.125,
        nonlinearity: Nonlinearity::Identity,
    };
    let generator = GatedGenerator::random(4, 2, 103);
    let theta = ThetaParams::random(dims, 1.0, 0.3, 104);
    let mut rng = linalg::rng_from_seed(105);
    let s = linalg::gaussian_vector(3, &mut rng);
    let linear = linalg::gaussian_vector(2, &mut rng);

    let gen = Generator::Gated(generator.clone());
    let tape = policy_forward_tape_with(&s, &theta, &gen, &cfg).unwrap();
    let grad_action = quadratic_action_loss_grad(&tape.action, &linear);
    let analytic = parameter_gradients(&tape, &theta, &grad_action).unwrap();

    // step rotations are fixed by the (frozen) gate networks
    let rotations: Vec<DMatrix<f64>> = (1..=cfg.depth_steps)
        .map(|i| crate::linalg::expm(&(cfg.step * generator.velocity_raw(cfg.time_at(i)))))
        .collect();
    let loss = |raw: &crate::flows::RawTheta| -> f64 {
        let mut w = raw.w0.clone();
        let mut x = &raw.omega1 * &s;
        for rot in &rotations {
            w = &w * rot;
            let z = &w * &x + &raw.bias;
            x += cfg.step * z;
        }
        let action = &raw.omega2 * x;
        linear.dot(&action) + 0.5 * action.norm_squared()
    };
    let oracle = finite_difference_gradient(loss, &theta, 1e-5).unwrap();
    assert_blocks_match(&analytic, &oracle);
    // gate rotations do not depend on Q or N
    assert_eq!(analytic.q.norm_squared(), 0.0);
    assert_eq!(analytic.n_mat.norm_squared(), 0.0);
}

#[test]
fn fd_oracle_exact_on_quadratics() {
    let flat: Vec<f64> = vec![0.3, -1.2, 2.0, 0.7];
    let grad = finite_difference_flat(|x| x.iter().map(|v| v * v).sum(), &flat, 1e-5).unwrap();
    for (g, x) in grad.iter().zip(flat.iter()) {
        assert!((g - 2.0 * x).abs() < 1e-8);
    }
}

#[test]
fn fd_oracle_exact_on_linear() {
    let c = [1.5, -0.25, 0.0, 3.0];
    let flat = vec![0.1, 0.2, 0.3, 0.4];
    let grad =
        finite_difference_flat(|x| x.iter().zip(c.iter()).map(|(v, w)| v * w).sum(), &flat, 1e-5)
            .unwrap();
    for (g, w) in grad.iter().zip(c.iter()) {
        assert!((g - w).abs() < 1e-9);
    }
}
