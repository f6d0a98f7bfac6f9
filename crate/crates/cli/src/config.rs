//! Experiment configuration: a flat, sectioned key-value file (TOML subset)
//! merged with command-line overrides. Unknown keys are rejected; flags win
//! over file values.

use std::path::Path;

use serde::{Deserialize, Serialize};

use orthoflow::envs::ClippedLinearEnv;
use orthoflow::es::{ESConfig, NormBounds, StepSchedule};
use orthoflow::flows::{FlowConfig, GeneratorKind, Nonlinearity};
use orthoflow::stability::{AuditConfig, ContrastConfig, StabilityGrid};
use orthoflow::supervised::{SupervisedConfig, SynthKind};

/// Wire version of the CSV/JSON outputs.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowSection {
    pub depth_steps: usize,
    pub horizon: f64,
    pub step: f64,
    pub nonlinearity: Nonlinearity,
}

impl Default for FlowSection {
    fn default() -> Self {
        let d = FlowConfig::default();
        FlowSection {
            depth_steps: d.depth_steps,
            horizon: d.horizon,
            step: d.step,
            nonlinearity: d.nonlinearity,
        }
    }
}

impl FlowSection {
    pub fn to_flow_config(&self) -> FlowConfig {
        FlowConfig {
            depth_steps: self.depth_steps,
            horizon: self.horizon,
            step: self.step,
            nonlinearity: self.nonlinearity,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EsSection {
    pub sigma: f64,
    pub perturbations: usize,
    pub schedule: ScheduleKind,
    pub step_size: f64,
    pub antithetic: bool,
    pub iterations: usize,
    /// Number of independent training seeds aggregated by `train-es`.
    pub train_seeds: usize,
    /// Hidden width of the trained policy.
    pub hidden_dim: usize,
    /// Optional norm-condition monitors (flagged, never clamped).
    pub bound_d: Option<f64>,
    pub bound_d_b: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Constant,
    InverseSqrt,
}

impl Default for EsSection {
    fn default() -> Self {
        EsSection {
            sigma: 0.1,
            perturbations: 200,
            schedule: ScheduleKind::Constant,
            step_size: 0.01,
            antithetic: false,
            iterations: 200,
            train_seeds: 1,
            hidden_dim: 16,
            bound_d: None,
            bound_d_b: None,
        }
    }
}

impl EsSection {
    pub fn to_es_config(&self, seed: u64) -> ESConfig {
        ESConfig {
            sigma: self.sigma,
            perturbations: self.perturbations,
            schedule: match self.schedule {
                ScheduleKind::Constant => StepSchedule::Constant(self.step_size),
                ScheduleKind::InverseSqrt => StepSchedule::InverseSqrt,
            },
            antithetic: self.antithetic,
            seed,
        }
    }

    pub fn norm_bounds(&self) -> Option<NormBounds> {
        match (self.bound_d, self.bound_d_b) {
            (Some(d), Some(d_b)) => Some(NormBounds { d, d_b }),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvSection {
    pub state_dim: usize,
    pub action_dim: usize,
    pub horizon: usize,
    pub env_seed: u64,
}

impl Default for EnvSection {
    fn default() -> Self {
        EnvSection {
            state_dim: 8,
            action_dim: 2,
            horizon: 50,
            env_seed: 0,
        }
    }
}

impl EnvSection {
    pub fn build(&self) -> ClippedLinearEnv {
        ClippedLinearEnv::seeded(self.state_dim, self.action_dim, self.horizon, self.env_seed)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SupervisedSection {
    pub hidden_dim: usize,
    pub depth_steps: usize,
    pub step: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub nonlinearity: Nonlinearity,
    pub generator: GeneratorKind,
    pub gate_count: usize,
    /// "blobs", "rings", or a CSV path.
    pub dataset: String,
    /// Sample count for synthetic datasets.
    pub count: usize,
}

impl Default for SupervisedSection {
    fn default() -> Self {
        let d = SupervisedConfig::default();
        SupervisedSection {
            hidden_dim: d.hidden_dim,
            depth_steps: d.depth_steps,
            step: d.step,
            epochs: d.epochs,
            learning_rate: d.learning_rate,
            batch_size: d.batch_size,
            nonlinearity: d.nonlinearity,
            generator: d.generator,
            gate_count: d.gate_count,
            dataset: "blobs".into(),
            count: 200,
        }
    }
}

impl SupervisedSection {
    pub fn to_supervised_config(&self, seed: u64) -> SupervisedConfig {
        SupervisedConfig {
            hidden_dim: self.hidden_dim,
            depth_steps: self.depth_steps,
            step: self.step,
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            nonlinearity: self.nonlinearity,
            generator: self.generator,
            gate_count: self.gate_count,
            seed,
        }
    }

    pub fn dataset_source(&self) -> DatasetSource {
        match self.dataset.as_str() {
            "blobs" => DatasetSource::Synth(SynthKind::Blobs),
            "rings" => DatasetSource::Synth(SynthKind::Rings),
            path => DatasetSource::Csv(path.to_string()),
        }
    }
}

pub enum DatasetSource {
    Synth(SynthKind),
    Csv(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StabilitySection {
    pub dims: Vec<usize>,
    pub depths: Vec<usize>,
    pub generators: Vec<GeneratorKind>,
    pub nonlinearities: Vec<Nonlinearity>,
    pub seeds: Vec<u64>,
}

impl Default for StabilitySection {
    fn default() -> Self {
        let g = StabilityGrid::default();
        StabilitySection {
            dims: g.dims,
            depths: g.depths,
            generators: g.generators,
            nonlinearities: g.nonlinearities,
            seeds: g.seeds,
        }
    }
}

impl StabilitySection {
    pub fn to_grid(&self) -> StabilityGrid {
        StabilityGrid {
            dims: self.dims.clone(),
            depths: self.depths.clone(),
            generators: self.generators.clone(),
            nonlinearities: self.nonlinearities.clone(),
            seeds: self.seeds.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContrastSection {
    pub dim: usize,
    pub depth: usize,
    pub nonlinearity: Nonlinearity,
    pub degree: usize,
    pub coefficient_scale: f64,
    pub seeds: Vec<u64>,
}

impl Default for ContrastSection {
    fn default() -> Self {
        let c = ContrastConfig::default();
        ContrastSection {
            dim: c.dim,
            depth: c.depth,
            nonlinearity: c.nonlinearity,
            degree: c.degree,
            coefficient_scale: c.coefficient_scale,
            seeds: vec![0, 1, 2],
        }
    }
}

impl ContrastSection {
    pub fn to_config(&self) -> ContrastConfig {
        ContrastConfig {
            dim: self.dim,
            depth: self.depth,
            nonlinearity: self.nonlinearity,
            degree: self.degree,
            coefficient_scale: self.coefficient_scale,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoundsSection {
    pub d_bound: f64,
    pub d_b_bound: f64,
    pub hidden_dim: usize,
    pub policy_samples: usize,
    pub lipschitz_pairs: usize,
    pub second_moment_trials: usize,
    pub contraction_pairs: usize,
}

impl Default for BoundsSection {
    fn default() -> Self {
        let a = AuditConfig::default();
        BoundsSection {
            d_bound: a.d_bound,
            d_b_bound: a.d_b_bound,
            hidden_dim: a.hidden_dim,
            policy_samples: a.policy_samples,
            lipschitz_pairs: a.lipschitz_pairs,
            second_moment_trials: a.second_moment_trials,
            contraction_pairs: a.contraction_pairs,
        }
    }
}

impl BoundsSection {
    pub fn to_audit_config(&self, sigma: f64, seed: u64) -> AuditConfig {
        AuditConfig {
            d_bound: self.d_bound,
            d_b_bound: self.d_b_bound,
            hidden_dim: self.hidden_dim,
            policy_samples: self.policy_samples,
            lipschitz_pairs: self.lipschitz_pairs,
            second_moment_trials: self.second_moment_trials,
            contraction_pairs: self.contraction_pairs,
            sigma,
            seed,
        }
    }
}

/// Full experiment configuration as read from the config file.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub flow: FlowSection,
    pub es: EsSection,
    pub env: EnvSection,
    pub supervised: SupervisedSection,
    pub stability: StabilitySection,
    pub contrast: ContrastSection,
    pub bounds: BoundsSection,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| format!("config error: {e}"))
    }

    /// Constraint checks beyond shape: positivity and enum sanity, with key
    /// paths in the messages.
    pub fn validate(&self) -> Result<(), String> {
        self.flow
            .to_flow_config()
            .validate()
            .map_err(|e| format!("flow: {e}"))?;
        self.es
            .to_es_config(0)
            .validate()
            .map_err(|e| format!("es: {e}"))?;
        if self.es.iterations == 0 {
            return Err("es.iterations must be at least 1".into());
        }
        if self.es.train_seeds == 0 {
            return Err("es.train_seeds must be at least 1".into());
        }
        if self.es.hidden_dim == 0 {
            return Err("es.hidden_dim must be at least 1".into());
        }
        if self.env.state_dim == 0 || self.env.action_dim == 0 || self.env.horizon == 0 {
            return Err("env dimensions and horizon must be positive".into());
        }
        self.supervised
            .to_supervised_config(0)
            .validate()
            .map_err(|e| format!("supervised: {e}"))?;
        self.stability
            .to_grid()
            .validate()
            .map_err(|e| format!("stability: {e}"))?;
        if self.contrast.seeds.is_empty() {
            return Err("contrast.seeds must be nonempty".into());
        }
        if !(self.bounds.d_bound > 0.0 && self.bounds.d_b_bound > 0.0) {
            return Err("bounds.d_bound and bounds.d_b_bound must be positive".into());
        }
        Ok(())
    }
}
