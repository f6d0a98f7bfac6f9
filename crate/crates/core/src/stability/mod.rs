//! Verification harness: batch activation-gradient ratio checks across a
//! configuration grid, the baseline contrast report, and the appendix-bound
//! audits (policy norm, objective Lipschitz, ES second moment, exponential
//! contraction).

use nalgebra::DVector;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envs::{lipschitz_constant, rollout_score, Environment};
use crate::error::{Error, Result};
use crate::es::{es_gradient, ESConfig};
use crate::flows::{
    forward, gradient_ratio_bounds, trig_baseline_forward, FlowConfig, GatedGenerator, Generator,
    GeneratorKind, IsoGenerator, Nonlinearity, ThetaDims, ThetaParams, TrigBaselineGenerator,
};
use crate::grad::{activation_gradients, gradient_ratio_profile};
use crate::linalg::{self, expm, spectral_norm};

const E: f64 = std::f64::consts::E;

/// Grid of flow configurations for the ratio-bound sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityGrid {
    pub dims: Vec<usize>,
    pub depths: Vec<usize>,
    pub generators: Vec<GeneratorKind>,
    pub nonlinearities: Vec<Nonlinearity>,
    pub seeds: Vec<u64>,
}

impl Default for StabilityGrid {
    fn default() -> Self {
        StabilityGrid {
            dims: vec![2, 4, 8, 16, 32],
            depths: vec![10, 100, 1000],
            generators: vec![GeneratorKind::Iso, GeneratorKind::Gated],
            nonlinearities: vec![Nonlinearity::Abs, Nonlinearity::Identity],
            seeds: vec![0, 1, 2, 3, 4],
        }
    }
}

impl StabilityGrid {
    pub fn validate(&self) -> Result<()> {
        if self.dims.is_empty()
            || self.depths.is_empty()
            || self.generators.is_empty()
            || self.nonlinearities.is_empty()
            || self.seeds.is_empty()
        {
            return Err(Error::Config("stability grid must be nonempty".into()));
        }
        if self.generators.contains(&GeneratorKind::TrigBaseline) {
            return Err(Error::Config(
                "the ratio-bound sweep covers constrained generators; the baseline has its own contrast report".into(),
            ));
        }
        Ok(())
    }

    fn cells(&self) -> Vec<(usize, usize, GeneratorKind, Nonlinearity, u64)> {
        let mut cells = Vec::new();
        for &dim in &self.dims {
            for &depth in &self.depths {
                for &generator in &self.generators {
                    for &nonlinearity in &self.nonlinearities {
                        for &seed in &self.seeds {
                            cells.push((dim, depth, generator, nonlinearity, seed));
                        }
                    }
                }
            }
        }
        cells
    }
}

/// Slack applied to the theoretical ratio interval.
pub const RATIO_SLACK: f64 = 1e-9;

/// One grid cell's measured ratio span against its theoretical interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityCell {
    pub dim: usize,
    pub depth: usize,
    pub generator: GeneratorKind,
    pub nonlinearity: Nonlinearity,
    pub seed: u64,
    pub min_ratio: f64,
    pub max_ratio: f64,
    pub lower_bound: f64,
    pub upper_bound: f64,
    pub pass: bool,
    /// Integration failure, recorded instead of aborting the sweep.
    pub error: Option<String>,
}

/// Ratio-bound sweep results with the asymptotic reference constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub cells: Vec<StabilityCell>,
    pub asymptotic_lower: f64,
    pub asymptotic_upper: f64,
    pub all_pass: bool,
}

impl StabilityReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "dim,depth,generator,nonlinearity,seed,min_ratio,max_ratio,lower_bound,upper_bound,asymptotic_lower,asymptotic_upper,pass,error\n",
        );
        for c in &self.cells {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                c.dim,
                c.depth,
                c.generator,
                c.nonlinearity,
                c.seed,
                c.min_ratio,
                c.max_ratio,
                c.lower_bound,
                c.upper_bound,
                self.asymptotic_lower,
                self.asymptotic_upper,
                c.pass,
                c.error.as_deref().unwrap_or("")
            ));
        }
        out
    }
}

fn cell_rng(base_seed: u64, index: usize) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(base_seed);
    rng.set_stream(index as u64 + 1);
    rng
}

/// Runs every grid cell: a random constrained flow, a random unit terminal
/// gradient, the backward recursion, and the finite-depth interval check.
/// Cells run in parallel; rows keep grid order.
pub fn verify_lemma1(grid: &StabilityGrid, base_seed: u64) -> Result<StabilityReport> {
    grid.validate()?;
    let cells: Vec<StabilityCell> = grid
        .cells()
        .into_par_iter()
        .enumerate()
        .map(|(index, (dim, depth, generator, nonlinearity, seed))| {
            let mut rng = cell_rng(base_seed.wrapping_add(seed), index);
            run_cell(dim, depth, generator, nonlinearity, seed, &mut rng)
        })
        .collect();
    let all_pass = cells.iter().all(|c| c.pass);
    Ok(StabilityReport {
        cells,
        asymptotic_lower: 1.0 / E,
        asymptotic_upper: E,
        all_pass,
    })
}

fn run_cell(
    dim: usize,
    depth: usize,
    generator_kind: GeneratorKind,
    nonlinearity: Nonlinearity,
    seed: u64,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> StabilityCell {
    let (lower_bound, upper_bound) = gradient_ratio_bounds(depth, 1.0 / depth as f64);
    let mut cell = StabilityCell {
        dim,
        depth,
        generator: generator_kind,
        nonlinearity,
        seed,
        min_ratio: f64::NAN,
        max_ratio: f64::NAN,
        lower_bound,
        upper_bound,
        pass: false,
        error: None,
    };
    let result = (|| -> Result<(f64, f64)> {
        let generator = match generator_kind {
            GeneratorKind::Iso => Generator::Iso(IsoGenerator::new(
                linalg::random_symmetric(dim, 2.0, rng),
                linalg::random_symmetric(dim, 2.0, rng),
            )?),
            GeneratorKind::Gated => {
                Generator::Gated(GatedGenerator::random(dim, 3, rng.gen::<u64>()))
            }
            GeneratorKind::TrigBaseline => {
                return Err(Error::Config("baseline handled by the contrast report".into()))
            }
        };
        let cfg = FlowConfig::with_depth(depth, nonlinearity)?;
        let w0 = linalg::haar_orthogonal_with(dim, rng);
        let x0 = linalg::gaussian_vector(dim, rng);
        let tape = forward(&x0, &w0, &generator, None, &cfg)?;
        let grads = activation_gradients(&tape, &linalg::random_unit_vector(dim, rng))?;
        let ratios = gradient_ratio_profile(&grads)?;
        let min = ratios.iter().copied().fold(f64::INFINITY, f64::min);
        let max = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok((min, max))
    })();
    match result {
        Ok((min, max)) => {
            cell.min_ratio = min;
            cell.max_ratio = max;
            cell.pass = min >= lower_bound - RATIO_SLACK && max <= upper_bound + RATIO_SLACK;
        }
        Err(e) => cell.error = Some(e.to_string()),
    }
    cell
}

/// Contrast configuration: the constrained flow and the trigonometric
/// baseline share dimensions and depth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContrastConfig {
    pub dim: usize,
    pub depth: usize,
    pub nonlinearity: Nonlinearity,
    /// Trigonometric polynomial degree of the baseline.
    pub degree: usize,
    /// Scale of the baseline's random coefficients.
    pub coefficient_scale: f64,
}

impl Default for ContrastConfig {
    fn default() -> Self {
        ContrastConfig {
            dim: 16,
            depth: 1000,
            nonlinearity: Nonlinearity::Abs,
            degree: 5,
            coefficient_scale: 3.0,
        }
    }
}

/// One side of a contrast row; bounds apply only to the constrained side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastCell {
    pub seed: u64,
    pub side: String,
    pub min_ratio: f64,
    pub max_ratio: f64,
    pub lower_bound: Option<f64>,
    pub upper_bound: Option<f64>,
    pub pass: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastReport {
    pub config: ContrastConfig,
    pub cells: Vec<ContrastCell>,
    /// Pass over the constrained cells only; the baseline is a measurement.
    pub constrained_pass: bool,
}

impl ContrastReport {
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("seed,side,min_ratio,max_ratio,lower_bound,upper_bound,pass\n");
        for c in &self.cells {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                c.seed,
                c.side,
                c.min_ratio,
                c.max_ratio,
                c.lower_bound.map(|v| v.to_string()).unwrap_or_default(),
                c.upper_bound.map(|v| v.to_string()).unwrap_or_default(),
                c.pass.map(|v| v.to_string()).unwrap_or_default(),
            ));
        }
        out
    }
}

/// Runs the constrained flow and the unconstrained trigonometric baseline
/// side by side, asserting the ratio interval only for the constrained side
/// and recording the baseline span as a measurement.
pub fn baseline_contrast(config: &ContrastConfig, seeds: &[u64]) -> Result<ContrastReport> {
    if seeds.is_empty() {
        return Err(Error::Config("contrast needs at least one seed".into()));
    }
    let cfg = FlowConfig::with_depth(config.depth, config.nonlinearity)?;
    let (lower, upper) = gradient_ratio_bounds(config.depth, cfg.step);
    let mut cells = Vec::with_capacity(seeds.len() * 2);
    for &seed in seeds {
        let mut rng = cell_rng(seed, 0);
        let generator = Generator::Iso(IsoGenerator::new(
            linalg::random_symmetric(config.dim, 2.0, &mut rng),
            linalg::random_symmetric(config.dim, 2.0, &mut rng),
        )?);
        let w0 = linalg::haar_orthogonal_with(config.dim, &mut rng);
        let x0 = linalg::gaussian_vector(config.dim, &mut rng);
        let seed_grad = linalg::random_unit_vector(config.dim, &mut rng);

        let tape = forward(&x0, &w0, &generator, None, &cfg)?;
        let ratios = gradient_ratio_profile(&activation_gradients(&tape, &seed_grad)?)?;
        let min = ratios.iter().copied().fold(f64::INFINITY, f64::min);
        let max = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        cells.push(ContrastCell {
            seed,
            side: "odetoode".into(),
            min_ratio: min,
            max_ratio: max,
            lower_bound: Some(lower),
            upper_bound: Some(upper),
            pass: Some(min >= lower - RATIO_SLACK && max <= upper + RATIO_SLACK),
        });

        let baseline = TrigBaselineGenerator::random(
            config.dim,
            config.degree,
            config.coefficient_scale,
            seed.wrapping_add(0x5eed),
        );
        let tape = trig_baseline_forward(&x0, &baseline, &cfg)?;
        let ratios = gradient_ratio_profile(&activation_gradients(&tape, &seed_grad)?)?;
        let min = ratios.iter().copied().fold(f64::INFINITY, f64::min);
        let max = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        cells.push(ContrastCell {
            seed,
            side: "trig_baseline".into(),
            min_ratio: min,
            max_ratio: max,
            lower_bound: None,
            upper_bound: None,
            pass: None,
        });
    }
    let constrained_pass = cells
        .iter()
        .filter(|c| c.side == "odetoode")
        .all(|c| c.pass == Some(true));
    Ok(ContrastReport {
        config: *config,
        cells,
        constrained_pass,
    })
}

/// Sample counts for the appendix audits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuditConfig {
    /// Norm region of the symmetric blocks, ||N||₂, ||Q||₂ ≤ D.
    pub d_bound: f64,
    /// Bias norm region ||b||₂ ≤ D_b.
    pub d_b_bound: f64,
    pub hidden_dim: usize,
    pub policy_samples: usize,
    pub lipschitz_pairs: usize,
    pub second_moment_trials: usize,
    pub contraction_pairs: usize,
    pub sigma: f64,
    pub seed: u64,
}

impl Default for AuditConfig {
    fn default() -> Self {
        AuditConfig {
            d_bound: 0.8,
            d_b_bound: 0.5,
            hidden_dim: 16,
            policy_samples: 1000,
            lipschitz_pairs: 1000,
            second_moment_trials: 10_000,
            contraction_pairs: 1000,
            sigma: 0.1,
            seed: 0,
        }
    }
}

/// One audit's outcome: the largest observed violation of its bound
/// (negative margins mean slack to spare).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditResult {
    pub name: String,
    pub samples: usize,
    /// max over samples of (observed - bound); pass requires ≤ slack.
    pub worst_margin: f64,
    pub slack: f64,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsReport {
    pub audits: Vec<AuditResult>,
    pub all_pass: bool,
}

impl BoundsReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("audit,samples,worst_margin,slack,pass,detail\n");
        for a in &self.audits {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                a.name, a.samples, a.worst_margin, a.slack, a.pass, a.detail
            ));
        }
        out
    }
}

/// θ sample with ||N||₂, ||Q||₂ ≤ D and ||b||₂ ≤ D_b.
fn sample_bounded_theta<R: Rng>(
    dims: ThetaDims,
    d_bound: f64,
    d_b_bound: f64,
    rng: &mut R,
) -> ThetaParams {
    let fraction = rng.gen_range(0.3..0.95);
    let mut theta = ThetaParams::random(dims, d_bound * fraction, 0.0, rng.gen::<u64>());
    let direction = linalg::random_unit_vector(dims.hidden_dim, rng);
    theta.bias = direction * (d_b_bound * rng.gen_range(0.1..0.95));
    theta
}

/// Runs the four appendix audits against the environment:
/// (a) policy output norm, (b) objective Lipschitz bound with the computed
/// constant (plus the rollout state-norm bound), (c) ES estimator second
/// moment, (d) exponential-map contraction.
pub fn verify_appendix_bounds<Env: Environment>(
    env: &Env,
    flow: &FlowConfig,
    cfg: &AuditConfig,
) -> Result<BoundsReport> {
    let spec = env.spec();
    let dims = ThetaDims::new(spec.state_dim, cfg.hidden_dim, spec.action_dim);
    let mut rng = cell_rng(cfg.seed, 0xa0d1);
    let mut audits = Vec::new();

    // (a) ||g(s)|| ≤ e·||s|| + (e-1)·||b||
    {
        let mut worst = f64::NEG_INFINITY;
        for _ in 0..cfg.policy_samples {
            let theta = sample_bounded_theta(dims, cfg.d_bound, cfg.d_b_bound, &mut rng);
            let s = linalg::gaussian_vector(spec.state_dim, &mut rng) * 2.0;
            let action = crate::flows::policy_forward(&s, &theta, flow)?;
            let bound = E * s.norm() + (E - 1.0) * theta.bias.norm();
            worst = worst.max(action.norm() - bound);
        }
        audits.push(AuditResult {
            name: "policy_norm".into(),
            samples: cfg.policy_samples,
            worst_margin: worst,
            slack: 1e-9,
            pass: worst <= 1e-9,
            detail: "||g(s)|| vs e||s|| + (e-1)||b||".into(),
        });
    }

    // (b) |F(θ') - F(θ'')| ≤ C·||θ' - θ''|| and the rollout state-norm bound
    {
        let zero_action = DVector::zeros(spec.action_dim);
        let bound = lipschitz_constant(env, cfg.d_bound, cfg.d_b_bound, &zero_action)?;
        let mut worst = f64::NEG_INFINITY;
        let mut worst_state = f64::NEG_INFINITY;
        for _ in 0..cfg.lipschitz_pairs {
            let theta_a = sample_bounded_theta(dims, cfg.d_bound, cfg.d_b_bound, &mut rng);
            let theta_b = sample_bounded_theta(dims, cfg.d_bound, cfg.d_b_bound, &mut rng);
            let fa = rollout_score(env, &theta_a, flow)?;
            let fb = rollout_score(env, &theta_b, flow)?;
            let flat_a = DVector::from_vec(theta_a.flatten());
            let flat_b = DVector::from_vec(theta_b.flatten());
            let distance = (flat_a - flat_b).norm();
            worst = worst.max((fa - fb).abs() - bound.c_const * distance);

            let mut state = spec.initial_state_vector();
            let plan = crate::flows::PolicyPlan::from_theta(&theta_a, flow)?;
            for _ in 0..spec.horizon {
                let action = plan.act(&state)?;
                let (next, _) = env.step(&state, &action)?;
                state = next;
                worst_state = worst_state.max(state.norm() - bound.state_norm_bound);
            }
        }
        audits.push(AuditResult {
            name: "objective_lipschitz".into(),
            samples: cfg.lipschitz_pairs,
            worst_margin: worst,
            slack: 1e-9,
            pass: worst <= 1e-9,
            detail: format!("computed constant C = {:.6e}", bound.c_const),
        });
        audits.push(AuditResult {
            name: "rollout_state_norm".into(),
            samples: cfg.lipschitz_pairs,
            worst_margin: worst_state,
            slack: 1e-9,
            pass: worst_state <= 1e-9,
            detail: format!("state bound {:.6e}", bound.state_norm_bound),
        });
    }

    // (c) E||∇̃F_σ||² ≤ K²M²·l/σ², the sharpest (single-perturbation) form
    {
        let theta = sample_bounded_theta(dims, cfg.d_bound, cfg.d_b_bound, &mut rng);
        let flat = theta.flatten();
        let objective = crate::envs::rollout_objective(env, dims, flow);
        let es_cfg = ESConfig {
            sigma: cfg.sigma,
            perturbations: 1,
            seed: cfg.seed,
            ..ESConfig::default()
        };
        let samples: Vec<f64> = (0..cfg.second_moment_trials)
            .into_par_iter()
            .map(|trial| {
                let estimate = es_gradient(&objective, &flat, &es_cfg, trial as u64 + 1)
                    .expect("bounded rollouts evaluate");
                estimate.iter().map(|v| v * v).sum::<f64>()
            })
            .collect();
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        let standard_error = (var / n).sqrt();
        let k = spec.horizon as f64;
        let bound = k * k * spec.score_bound * spec.score_bound * dims.flat_len() as f64
            / (cfg.sigma * cfg.sigma);
        let slack = 4.0 * standard_error;
        audits.push(AuditResult {
            name: "es_second_moment".into(),
            samples: cfg.second_moment_trials,
            worst_margin: mean - bound,
            slack,
            pass: mean <= bound + slack,
            detail: format!("mean {:.6e} vs bound {:.6e} (4 SE = {:.3e})", mean, bound, slack),
        });
    }

    // (d) ||exp(A') - exp(A'')||₂ ≤ ||A' - A''||₂ for skew pairs
    {
        let mut worst = f64::NEG_INFINITY;
        for _ in 0..cfg.contraction_pairs {
            let norm_a = rng.gen_range(0.1..3.0);
            let norm_b = rng.gen_range(0.1..3.0);
            let a = linalg::random_skew(cfg.hidden_dim, norm_a, &mut rng);
            let b = linalg::random_skew(cfg.hidden_dim, norm_b, &mut rng);
            let lhs = spectral_norm(&(expm(a.as_matrix()) - expm(b.as_matrix())));
            let rhs = spectral_norm(&(a.as_matrix() - b.as_matrix()));
            worst = worst.max(lhs - rhs);
        }
        audits.push(AuditResult {
            name: "exp_contraction".into(),
            samples: cfg.contraction_pairs,
            worst_margin: worst,
            slack: 1e-9,
            pass: worst <= 1e-9,
            detail: "||exp(A') - exp(A'')||₂ vs ||A' - A''||₂".into(),
        });
    }

    let all_pass = audits.iter().all(|a| a.pass);
    Ok(BoundsReport { audits, all_pass })
}
