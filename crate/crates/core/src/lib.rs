//! Sampling-based model predictive control.
//!
//! Two planners share one code path:
//!
//! - **MPPI**: perturb a nominal control sequence with Gaussian noise, roll
//!   every sample through the dynamics, and update the nominal sequence with an
//!   exponentially cost-weighted average of the perturbations.
//! - **SOPPI**: MPPI where, before weighting, the sampled controls of each
//!   timestep are refined by a few Stein variational gradient descent
//!   iterations on the single-step cost.
//!
//! The [`harness`] module drives paired-seed experiment batteries on the
//! cart-pole swing-up task and writes CSV records, summaries and Welch
//! t-test comparisons.

pub mod controller;
pub mod cost;
pub mod dual;
pub mod dynamics;
mod error;
pub mod harness;
pub mod metrics;
pub mod sampling;
pub mod svgd;

pub use controller::{
    compute_weights, evaluate_batch, mppi_step, run_episode, soppi_step, update_nominal, Algorithm,
    ControllerConfig, StepResult, TailHook, TerminalInit,
};
pub use cost::CostSpec;
pub use dynamics::{
    CartPole, CartPoleParams, Control, DoubleIntegrator, Dynamics, Jacobians, Pendulum,
    PendulumParams, State, System,
};
pub use error::{Error, Result};
pub use metrics::{SettlingCriterion, TrialRecord};
pub use sampling::{ControlSequence, NoiseTensor, SampleBatch};
pub use svgd::{Bandwidth, ParticleSet, RbfKernel, SvgdConfig};
