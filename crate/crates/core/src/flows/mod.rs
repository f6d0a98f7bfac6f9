//! Generators on the orthogonal group, the trigonometric contrast baseline,
//! and Euler integration of the nested flow and the policy network.

mod config;
mod generator;
mod integrate;
mod theta;

pub use config::{FlowConfig, Nonlinearity};
pub use generator::{
    gated_velocity, iso_velocity, GateNet, GatedGenerator, Generator, GeneratorKind,
    IsoGenerator, TrigBaselineGenerator, GATE_HIDDEN_DIM, TIME_EMBED_DIM,
};
pub use integrate::{
    forward, forward_theta, gradient_ratio_bounds, policy_forward, step_matrix_flow,
    trig_baseline_forward, FlowTape, PolicyPlan, WeightPath,
};
pub use theta::{RawTheta, ThetaDims, ThetaParams};
