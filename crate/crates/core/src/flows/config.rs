//! Integration configuration for the nested flow.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Elementwise nonlinearity of the main flow. Both variants have |f'| = 1
/// and f(0) = 0, which is what the gradient-stability analysis requires.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Nonlinearity {
    Abs,
    Identity,
}

impl Nonlinearity {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Nonlinearity::Abs => x.abs(),
            Nonlinearity::Identity => x,
        }
    }

    /// Derivative, with the subgradient of |x| at 0 fixed to +1.
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Nonlinearity::Abs => {
                if x < 0.0 {
                    -1.0
                } else {
                    1.0
                }
            }
            Nonlinearity::Identity => 1.0,
        }
    }
}

impl std::fmt::Display for Nonlinearity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Nonlinearity::Abs => write!(f, "abs"),
            Nonlinearity::Identity => write!(f, "identity"),
        }
    }
}

/// Euler discretization parameters shared by the main flow and the matrix
/// flow. Defaults follow the reinforcement-learning setup: step 0.04 on the
/// unit interval, i.e. 25 steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    pub depth_steps: usize,
    pub horizon: f64,
    pub step: f64,
    pub nonlinearity: Nonlinearity,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            depth_steps: 25,
            horizon: 1.0,
            step: 0.04,
            nonlinearity: Nonlinearity::Abs,
        }
    }
}

impl FlowConfig {
    /// Unit-horizon config with step 1/N.
    pub fn with_depth(depth_steps: usize, nonlinearity: Nonlinearity) -> Result<Self> {
        let cfg = FlowConfig {
            depth_steps,
            horizon: 1.0,
            step: 1.0 / depth_steps.max(1) as f64,
            nonlinearity,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth_steps == 0 {
            return Err(Error::Config("depth_steps must be at least 1".into()));
        }
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::Config(format!(
                "step must be positive and finite, got {}",
                self.step
            )));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::Config(format!(
                "horizon must be positive and finite, got {}",
                self.horizon
            )));
        }
        Ok(())
    }

    /// Time at the start of step `i` (1-based), where the velocity for that
    /// step is evaluated.
    #[inline]
    pub fn time_at(&self, i: usize) -> f64 {
        (i - 1) as f64 * self.step
    }
}
