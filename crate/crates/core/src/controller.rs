//! MPPI and SOPPI planning steps and the receding-horizon episode loop.

use std::fmt;
use std::sync::Arc;
use std::time::Instant;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::cost::CostSpec;
use crate::dynamics::{Control, Dynamics, State};
use crate::error::{check_dim, check_finite, Error, Result};
use crate::metrics::TrialRecord;
use crate::sampling::{draw_noise, perturb, step_seed, ControlSequence, SampleBatch};
use crate::svgd::{SteinWorkspace, SvgdConfig};

type Buf = SmallVec<[f64; 8]>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Mppi,
    Soppi,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Mppi => "mppi",
            Algorithm::Soppi => "soppi",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mppi" => Ok(Algorithm::Mppi),
            "soppi" => Ok(Algorithm::Soppi),
            other => Err(Error::Config(format!("unknown algorithm '{other}'"))),
        }
    }
}

/// Produces the last entry of the shifted nominal sequence from the state the
/// shifted sequence is predicted to reach (`x_{N−1}`).
#[derive(Clone)]
pub struct TailHook(pub Arc<dyn Fn(&State) -> Control + Send + Sync>);

impl fmt::Debug for TailHook {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("TailHook(..)")
    }
}

/// How the receding horizon fills the slot freed by the shift.
#[derive(Clone, Debug, Default)]
pub enum TerminalInit {
    #[default]
    Zero,
    Hook(TailHook),
}

#[derive(Clone, Debug)]
pub struct ControllerConfig {
    /// `K`.
    pub samples: usize,
    /// `N`.
    pub horizon: usize,
    pub lambda: f64,
    /// Noise standard deviation, applied to every control dimension.
    pub sigma: f64,
    pub seed: u64,
    pub svgd: SvgdConfig,
    pub terminal_init: TerminalInit,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            samples: 500,
            horizon: 80,
            lambda: 10.0,
            sigma: 5.0,
            seed: 0,
            svgd: SvgdConfig::default(),
            terminal_init: TerminalInit::Zero,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 || self.horizon == 0 {
            return Err(Error::InvalidParameter(format!(
                "samples and horizon must be >= 1, got K={} N={}",
                self.samples, self.horizon
            )));
        }
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "lambda must be > 0, got {}",
                self.lambda
            )));
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "sigma must be > 0, got {}",
                self.sigma
            )));
        }
        self.svgd.validate()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub u_star: ControlSequence,
    pub applied: Control,
    pub weights: Vec<f64>,
    pub costs: Vec<f64>,
    pub min_cost: f64,
    pub refined_batch: SampleBatch,
}

fn check_problem<D: Dynamics>(system: &D, cost: &CostSpec, x0: &State, horizon: usize) -> Result<()> {
    check_dim("cost state dim", system.state_dim(), cost.state_dim())?;
    check_dim("cost control dim", system.control_dim(), cost.control_dim())?;
    check_dim("initial state", system.state_dim(), x0.dim())?;
    check_finite("initial state", x0)?;
    cost.check_horizon(horizon)
}

/// Cost-to-go of every sample rolled out from `x0`. Samples whose rollout
/// turns non-finite get `+∞`.
pub fn evaluate_batch<D: Dynamics>(
    system: &D,
    cost: &CostSpec,
    x0: &State,
    batch: &SampleBatch,
) -> Result<Vec<f64>> {
    check_problem(system, cost, x0, batch.horizon())?;
    check_dim("batch control dim", system.control_dim(), batch.dim())?;
    Ok(evaluate_unchecked(system, cost, x0, batch))
}

fn evaluate_unchecked<D: Dynamics>(
    system: &D,
    cost: &CostSpec,
    x0: &[f64],
    batch: &SampleBatch,
) -> Vec<f64> {
    let n = system.state_dim();
    let block = batch.horizon() * batch.dim();
    let states_len = (batch.horizon() + 1) * n;
    let costs: Vec<f64> = batch
        .controls()
        .par_chunks(block)
        .map_init(
            || vec![0.0; states_len],
            |states, controls| {
                crate::dynamics::rollout_flat(system, x0, controls, states);
                cost.trajectory(states, controls)
            },
        )
        .collect();
    let bad = costs.iter().filter(|c| !c.is_finite()).count();
    if bad > 0 {
        warn!("{bad} of {} rollouts produced non-finite cost; excluded", costs.len());
    }
    costs
        .into_iter()
        .map(|c| if c.is_finite() { c } else { f64::INFINITY })
        .collect()
}

/// `w_k ∝ exp(−(S_k − β)/λ)` with `β = min S`.
pub fn compute_weights(costs: &[f64], lambda: f64) -> Result<Vec<f64>> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::InvalidParameter(format!("lambda must be > 0, got {lambda}")));
    }
    let beta = costs
        .iter()
        .copied()
        .filter(|c| c.is_finite())
        .fold(f64::INFINITY, f64::min);
    if !beta.is_finite() {
        return Err(Error::NoViableSamples);
    }
    let inv = 1.0 / lambda;
    let mut weights: Vec<f64> = costs
        .iter()
        .map(|&c| if c.is_finite() { (-(c - beta) * inv).exp() } else { 0.0 })
        .collect();
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    Ok(weights)
}

/// `u* = base + Σ_k w_k ε^k`, summed in sample order.
pub fn update_nominal(
    base: &ControlSequence,
    noises: &[f64],
    weights: &[f64],
) -> Result<ControlSequence> {
    let block = base.values().len();
    check_dim("noise tensor", weights.len() * block, noises.len())?;
    let mut acc = vec![0.0; block];
    for (eps, &w) in noises.chunks_exact(block).zip(weights) {
        if w == 0.0 {
            continue;
        }
        for (a, e) in acc.iter_mut().zip(eps) {
            *a += w * e;
        }
    }
    let values = base.values().iter().zip(&acc).map(|(b, a)| b + a).collect();
    ControlSequence::from_values(base.horizon(), base.dim(), values)
}

/// `∇_v L(F(x, v), v, t)` for one sample.
fn single_step_gradient<D: Dynamics>(
    system: &D,
    cost: &CostSpec,
    x: &[f64],
    u: &[f64],
    t: usize,
    grad: &mut [f64],
) {
    let (n, m) = (system.state_dim(), system.control_dim());
    let mut next: Buf = SmallVec::from_elem(0.0, n);
    let mut jac: SmallVec<[f64; 16]> = SmallVec::from_elem(0.0, n * m);
    let mut dx: Buf = SmallVec::from_elem(0.0, n);
    system.step_with_control_jacobian(x, u, &mut next, &mut jac);
    cost.running_gradients_into(&next, u, t, &mut dx, grad);
    for (c, g) in grad.iter_mut().enumerate() {
        for i in 0..n {
            *g += jac[i * m + c] * dx[i];
        }
    }
}

/// Gradient of the single-step cost `L(F(x, v), v, t)` with respect to `v`.
pub fn single_step_cost_gradient<D: Dynamics>(
    system: &D,
    cost: &CostSpec,
    state: &State,
    control: &Control,
    t: usize,
) -> Result<Vec<f64>> {
    check_problem(system, cost, state, t + 1)?;
    check_dim("control", system.control_dim(), control.dim())?;
    check_finite("control", control)?;
    let mut grad = vec![0.0; system.control_dim()];
    single_step_gradient(system, cost, state, control, t, &mut grad);
    Ok(grad)
}

/// Per-timestep SVGD refinement of every sample's controls.
fn refine<D: Dynamics>(
    system: &D,
    cost: &CostSpec,
    svgd: &SvgdConfig,
    x0: &[f64],
    batch: &SampleBatch,
) -> Result<SampleBatch> {
    let (n, m) = (system.state_dim(), system.control_dim());
    let (k, horizon) = (batch.samples(), batch.horizon());
    let mut controls = batch.controls().to_vec();
    let mut states: Vec<f64> = x0.iter().copied().cycle().take(k * n).collect();
    let mut v = vec![0.0; k * m];
    let mut grads = vec![0.0; k * m];
    let mut ws = SteinWorkspace::default();
    for t in 0..horizon {
        for s in 0..k {
            let at = (s * horizon + t) * m;
            v[s * m..(s + 1) * m].copy_from_slice(&controls[at..at + m]);
        }
        for _ in 0..svgd.iterations {
            grads
                .par_chunks_mut(m)
                .zip(states.par_chunks(n))
                .zip(v.par_chunks(m))
                .for_each(|((g, x), u)| single_step_gradient(system, cost, x, u, t, g));
            let phi = ws.direction(k, m, &v, &grads, svgd)?;
            for (vi, p) in v.iter_mut().zip(phi) {
                *vi = svgd.step_size.mul_add(*p, *vi);
            }
        }
        for s in 0..k {
            let at = (s * horizon + t) * m;
            controls[at..at + m].copy_from_slice(&v[s * m..(s + 1) * m]);
        }
        states
            .par_chunks_mut(n)
            .zip(v.par_chunks(m))
            .for_each(|(x, u)| {
                let mut next: Buf = SmallVec::from_elem(0.0, n);
                system.step_into(x, u, &mut next);
                x.copy_from_slice(&next);
            });
    }
    Ok(batch.with_refined_controls(controls))
}

fn plan<D: Dynamics>(
    system: &D,
    cost: &CostSpec,
    cfg: &ControllerConfig,
    x0: &State,
    u_init: &ControlSequence,
    seed: u64,
    algo: Algorithm,
) -> Result<StepResult> {
    let m = system.control_dim();
    let sigma = vec![cfg.sigma; m];
    let noise = draw_noise(seed, cfg.samples, cfg.horizon, m, &sigma)?;
    let batch = perturb(u_init, &noise)?;
    let batch = match algo {
        Algorithm::Soppi if cfg.svgd.iterations > 0 => refine(system, cost, &cfg.svgd, x0, &batch)?,
        _ => batch,
    };
    let costs = evaluate_unchecked(system, cost, x0, &batch);
    let weights = compute_weights(&costs, cfg.lambda)?;
    let min_cost = costs.iter().copied().fold(f64::INFINITY, f64::min);
    let u_star = update_nominal(batch.base(), batch.noises(), &weights)?;
    Ok(StepResult {
        applied: Control::from(u_star.at(0)),
        u_star,
        weights,
        costs,
        min_cost,
        refined_batch: batch,
    })
}

fn check_step<D: Dynamics>(
    system: &D,
    cost: &CostSpec,
    cfg: &ControllerConfig,
    x0: &State,
    u_init: &ControlSequence,
) -> Result<()> {
    cfg.validate()?;
    check_problem(system, cost, x0, cfg.horizon)?;
    check_dim("nominal horizon", cfg.horizon, u_init.horizon())?;
    check_dim("nominal control dim", system.control_dim(), u_init.dim())?;
    check_finite("nominal sequence", u_init.values())
}

/// One MPPI planning step with noise seeded by `cfg.seed`.
pub fn mppi_step<D: Dynamics>(
    system: &D,
    cost: &CostSpec,
    cfg: &ControllerConfig,
    x0: &State,
    u_init: &ControlSequence,
) -> Result<StepResult> {
    check_step(system, cost, cfg, x0, u_init)?;
    plan(system, cost, cfg, x0, u_init, cfg.seed, Algorithm::Mppi)
}

/// One SOPPI planning step: MPPI with the sampled controls of each timestep
/// refined by `cfg.svgd.iterations` SVGD iterations on the single-step cost.
pub fn soppi_step<D: Dynamics>(
    system: &D,
    cost: &CostSpec,
    cfg: &ControllerConfig,
    x0: &State,
    u_init: &ControlSequence,
) -> Result<StepResult> {
    check_step(system, cost, cfg, x0, u_init)?;
    plan(system, cost, cfg, x0, u_init, cfg.seed, Algorithm::Soppi)
}

/// Runs `steps` closed-loop control steps from `x0`. Step `i` draws its noise
/// from `step_seed(cfg.seed, i)`. Stops early if the true state turns
/// non-finite, marking the record as diverged.
pub fn run_episode<D: Dynamics>(
    system: &D,
    cost: &CostSpec,
    cfg: &ControllerConfig,
    x0: &State,
    algo: Algorithm,
    steps: usize,
) -> Result<TrialRecord> {
    if steps == 0 {
        return Err(Error::InvalidParameter("episode needs at least one step".into()));
    }
    let (n, m) = (system.state_dim(), system.control_dim());
    let mut u_init = ControlSequence::zeros(cfg.horizon, m);
    check_step(system, cost, cfg, x0, &u_init)?;
    let dt = system.dt();
    let mut record = TrialRecord::start(x0.clone()).with_angle_dims(cost.angle_dims());
    let mut x = x0.clone();
    for i in 0..steps {
        let started = Instant::now();
        let result = plan(system, cost, cfg, &x, &u_init, step_seed(cfg.seed, i as u64), algo)?;
        let wall = started.elapsed().as_secs_f64();
        let mut next = vec![0.0; n];
        system.step_into(&x, &result.applied, &mut next);
        let next = State::new(next);
        let finite = next.iter().all(|v| v.is_finite());
        record.push((i + 1) as f64 * dt, next.clone(), result.applied.clone(), wall);
        if !finite {
            warn!("state diverged at step {i}");
            record.mark_diverged();
            break;
        }
        let tail = match &cfg.terminal_init {
            TerminalInit::Zero => vec![0.0; m],
            TerminalInit::Hook(hook) => {
                let shifted = &result.u_star.values()[m..];
                let mut states = vec![0.0; cfg.horizon * n];
                crate::dynamics::rollout_flat(system, &next, shifted, &mut states);
                let predicted = State::from(&states[(cfg.horizon - 1) * n..]);
                let tail = (hook.0)(&predicted).into_vec();
                check_dim("tail hook output", m, tail.len())?;
                check_finite("tail hook output", &tail)?;
                tail
            }
        };
        u_init = result.u_star.shifted(&tail);
        x = next;
    }
    Ok(record)
}
