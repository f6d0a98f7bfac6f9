//! Nested neural ODE flows whose weight matrix evolves on the orthogonal
//! group, with exact reverse-mode gradients, evolution-strategies training,
//! and a verification harness for the architecture's gradient-stability and
//! Lipschitz guarantees.

pub mod error;
pub mod envs;
pub mod es;
pub mod flows;
pub mod grad;
pub mod linalg;
pub mod stability;
pub mod supervised;

pub use error::{Error, Result};
