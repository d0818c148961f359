//! Discrete-time dynamics `x_{t+1} = F(x_t, u_t)` with exact control Jacobians.
//!
//! Every system integrates with semi-implicit Euler: velocities are updated
//! first and the new velocities drive the position update. Angles are never
//! wrapped here; wrapping belongs to the cost and the metrics.

use std::ops::Deref;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::dual::{Dual, Real};
use crate::error::{check_dim, check_finite, Error, Result};

/// System state vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct State(Vec<f64>);

/// Control input vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Control(Vec<f64>);

macro_rules! vector_newtype {
    ($name:ident) => {
        impl $name {
            pub fn new(values: Vec<f64>) -> Self {
                Self(values)
            }

            pub fn zeros(dim: usize) -> Self {
                Self(vec![0.0; dim])
            }

            pub fn dim(&self) -> usize {
                self.0.len()
            }

            pub fn as_slice(&self) -> &[f64] {
                &self.0
            }

            pub fn into_vec(self) -> Vec<f64> {
                self.0
            }
        }

        impl Deref for $name {
            type Target = [f64];

            fn deref(&self) -> &[f64] {
                &self.0
            }
        }

        impl From<Vec<f64>> for $name {
            fn from(values: Vec<f64>) -> Self {
                Self(values)
            }
        }

        impl From<&[f64]> for $name {
            fn from(values: &[f64]) -> Self {
                Self(values.to_vec())
            }
        }
    };
}

vector_newtype!(State);
vector_newtype!(Control);

/// Partial derivatives of one dynamics step.
#[derive(Clone, Debug, PartialEq)]
pub struct Jacobians {
    /// `∂x_{t+1}/∂x_t`, n×n.
    pub d_next_d_state: DMatrix<f64>,
    /// `∂x_{t+1}/∂u_t`, n×m.
    pub d_next_d_control: DMatrix<f64>,
}

/// Scratch vector for dual-number passes; spills to the heap past 8 entries.
type DualBuf = SmallVec<[Dual; 8]>;

/// A discrete-time system.
///
/// Implementors provide [`Dynamics::eval`] generic over the scalar type; the
/// plain step and the Jacobians are derived from it.
pub trait Dynamics: Send + Sync {
    fn state_dim(&self) -> usize;

    fn control_dim(&self) -> usize;

    /// Integration step in seconds.
    fn dt(&self) -> f64;

    /// Writes `F(x, u)` into `next`. Slices have exactly the system dimensions.
    fn eval<T: Real>(&self, x: &[T], u: &[T], next: &mut [T]);

    /// Unchecked `f64` step.
    #[inline]
    fn step_into(&self, x: &[f64], u: &[f64], next: &mut [f64]) {
        self.eval(x, u, next)
    }

    /// Unchecked step that also fills `d_next_d_control` (row-major n×m),
    /// one dual pass per control dimension.
    fn step_with_control_jacobian(
        &self,
        x: &[f64],
        u: &[f64],
        next: &mut [f64],
        d_next_d_control: &mut [f64],
    ) {
        let (n, m) = (self.state_dim(), self.control_dim());
        let xd: DualBuf = x.iter().map(|&v| Dual::constant(v)).collect();
        let mut ud: DualBuf = u.iter().map(|&v| Dual::constant(v)).collect();
        let mut out: DualBuf = SmallVec::from_elem(Dual::default(), n);
        for j in 0..m {
            ud[j].eps = 1.0;
            self.eval(&xd, &ud, &mut out);
            ud[j].eps = 0.0;
            for i in 0..n {
                d_next_d_control[i * m + j] = out[i].eps;
            }
        }
        if m == 0 {
            self.eval(&xd, &ud, &mut out);
        }
        for (dst, o) in next.iter_mut().zip(&out) {
            *dst = o.re;
        }
    }
}

fn check_inputs<D: Dynamics + ?Sized>(system: &D, x: &[f64], u: &[f64]) -> Result<()> {
    check_dim("state", system.state_dim(), x.len())?;
    check_dim("control", system.control_dim(), u.len())?;
    check_finite("state", x)?;
    check_finite("control", u)
}

/// One checked dynamics step.
pub fn step<D: Dynamics>(system: &D, state: &State, control: &Control) -> Result<State> {
    check_inputs(system, state, control)?;
    let mut next = vec![0.0; system.state_dim()];
    system.step_into(state, control, &mut next);
    Ok(State(next))
}

/// Exact Jacobians of [`step`] by forward-mode differentiation.
pub fn jacobians<D: Dynamics>(system: &D, state: &State, control: &Control) -> Result<Jacobians> {
    check_inputs(system, state, control)?;
    let (n, m) = (system.state_dim(), system.control_dim());
    let mut xd: DualBuf = state.iter().map(|&v| Dual::constant(v)).collect();
    let mut ud: DualBuf = control.iter().map(|&v| Dual::constant(v)).collect();
    let mut out: DualBuf = SmallVec::from_elem(Dual::default(), n);

    let mut d_state = DMatrix::zeros(n, n);
    for j in 0..n {
        xd[j].eps = 1.0;
        system.eval(&xd, &ud, &mut out);
        xd[j].eps = 0.0;
        for i in 0..n {
            d_state[(i, j)] = out[i].eps;
        }
    }
    let mut d_control = DMatrix::zeros(n, m);
    for j in 0..m {
        ud[j].eps = 1.0;
        system.eval(&xd, &ud, &mut out);
        ud[j].eps = 0.0;
        for i in 0..n {
            d_control[(i, j)] = out[i].eps;
        }
    }
    Ok(Jacobians {
        d_next_d_state: d_state,
        d_next_d_control: d_control,
    })
}

/// Rolls `controls[..horizon]` forward from `x0`; returns `horizon + 1` states.
pub fn rollout<D: Dynamics>(
    system: &D,
    x0: &State,
    controls: &[Control],
    horizon: usize,
) -> Result<Vec<State>> {
    if horizon == 0 {
        return Err(Error::InvalidParameter(
            "rollout horizon must be >= 1".into(),
        ));
    }
    check_dim("rollout controls", horizon, controls.len())?;
    let mut states = Vec::with_capacity(horizon + 1);
    states.push(x0.clone());
    for u in controls {
        let next = step(system, states.last().expect("non-empty"), u)?;
        states.push(next);
    }
    Ok(states)
}

/// Rolls a flat row-major `N×m` control block from `x0` into a flat
/// `(N+1)×n` state buffer. No checks; used on hot paths.
pub(crate) fn rollout_flat<D: Dynamics>(
    system: &D,
    x0: &[f64],
    controls: &[f64],
    states: &mut [f64],
) {
    let (n, m) = (system.state_dim(), system.control_dim());
    states[..n].copy_from_slice(x0);
    for (t, u) in controls.chunks_exact(m).enumerate() {
        let (head, tail) = states.split_at_mut((t + 1) * n);
        system.step_into(&head[t * n..], u, &mut tail[..n]);
    }
}

// ---------------------------------------------------------------------------
// Cart-pole
// ---------------------------------------------------------------------------

/// Cart-pole physical parameters. `theta = 0` is upright.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CartPoleParams {
    /// kg
    pub cart_mass: f64,
    /// kg
    pub pole_mass: f64,
    /// m, pivot to centre of mass
    pub pole_half_length: f64,
    /// m/s²
    pub gravity: f64,
    /// s
    pub dt: f64,
    /// N; symmetric clamp on the applied force when set.
    pub force_limit: Option<f64>,
    /// Coulomb cart friction coefficient.
    pub cart_friction: f64,
    /// Viscous pole friction coefficient.
    pub pole_friction: f64,
}

impl Default for CartPoleParams {
    fn default() -> Self {
        Self {
            cart_mass: 1.0,
            pole_mass: 0.1,
            pole_half_length: 0.5,
            gravity: 9.8,
            dt: 0.02,
            force_limit: None,
            cart_friction: 0.0,
            pole_friction: 0.0,
        }
    }
}

/// Cart-pole with state `(x, x_dot, theta, theta_dot)` and scalar force input.
#[derive(Clone, Debug, PartialEq)]
pub struct CartPole {
    params: CartPoleParams,
}

impl CartPole {
    pub fn new(params: CartPoleParams) -> Result<Self> {
        let p = &params;
        let positive = [
            ("cart_mass", p.cart_mass),
            ("pole_mass", p.pole_mass),
            ("pole_half_length", p.pole_half_length),
            ("dt", p.dt),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be > 0, got {v}"
                )));
            }
        }
        if !p.gravity.is_finite() || p.cart_friction < 0.0 || p.pole_friction < 0.0 {
            return Err(Error::InvalidParameter(
                "gravity/friction out of range".into(),
            ));
        }
        if let Some(limit) = p.force_limit {
            if !(limit > 0.0) {
                return Err(Error::InvalidParameter("force_limit must be > 0".into()));
            }
        }
        Ok(Self { params })
    }

    pub fn params(&self) -> &CartPoleParams {
        &self.params
    }
}

impl Default for CartPole {
    fn default() -> Self {
        Self::new(CartPoleParams::default()).expect("default parameters are valid")
    }
}

impl Dynamics for CartPole {
    fn state_dim(&self) -> usize {
        4
    }

    fn control_dim(&self) -> usize {
        1
    }

    fn dt(&self) -> f64 {
        self.params.dt
    }

    #[inline]
    fn eval<T: Real>(&self, x: &[T], u: &[T], next: &mut [T]) {
        cart_pole_eval(&self.params, x, u, next)
    }
}

#[inline]
fn cart_pole_eval<T: Real>(p: &CartPoleParams, x: &[T], u: &[T], next: &mut [T]) {
    let c = T::from_f64;
    let force = match p.force_limit {
        Some(limit) => u[0].clamp_value(-limit, limit),
        None => u[0],
    };
    let (pos, vel, theta, omega) = (x[0], x[1], x[2], x[3]);
    let (sin, cos) = (theta.sin(), theta.cos());
    let total_mass = p.cart_mass + p.pole_mass;
    let pole_ml = p.pole_mass * p.pole_half_length;

    let mut cart_push = force + c(pole_ml) * omega * omega * sin;
    if p.cart_friction != 0.0 {
        cart_push = cart_push - c(p.cart_friction) * vel.sign_constant();
    }
    let temp = cart_push / c(total_mass);
    let mut torque_term = c(p.gravity) * sin - cos * temp;
    if p.pole_friction != 0.0 {
        torque_term = torque_term - c(p.pole_friction / pole_ml) * omega;
    }
    let theta_acc = torque_term
        / (c(p.pole_half_length) * (c(4.0 / 3.0) - c(p.pole_mass) * cos * cos / c(total_mass)));
    let x_acc = temp - c(pole_ml) * theta_acc * cos / c(total_mass);

    let dt = c(p.dt);
    let vel_next = vel + dt * x_acc;
    let omega_next = omega + dt * theta_acc;
    next[0] = pos + dt * vel_next;
    next[1] = vel_next;
    next[2] = theta + dt * omega_next;
    next[3] = omega_next;
}

// ---------------------------------------------------------------------------
// Pendulum
// ---------------------------------------------------------------------------

/// Torque-driven pendulum. `theta = 0` hangs straight down.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PendulumParams {
    pub mass: f64,
    pub length: f64,
    pub gravity: f64,
    pub damping: f64,
    pub dt: f64,
}

impl Default for PendulumParams {
    fn default() -> Self {
        Self {
            mass: 1.0,
            length: 1.0,
            gravity: 9.8,
            damping: 0.0,
            dt: 0.02,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Pendulum {
    params: PendulumParams,
}

impl Pendulum {
    pub fn new(params: PendulumParams) -> Result<Self> {
        if !(params.mass > 0.0 && params.length > 0.0 && params.dt > 0.0) {
            return Err(Error::InvalidParameter(
                "pendulum mass, length and dt must be > 0".into(),
            ));
        }
        Ok(Self { params })
    }
}

impl Dynamics for Pendulum {
    fn state_dim(&self) -> usize {
        2
    }

    fn control_dim(&self) -> usize {
        1
    }

    fn dt(&self) -> f64 {
        self.params.dt
    }

    fn eval<T: Real>(&self, x: &[T], u: &[T], next: &mut [T]) {
        pendulum_eval(&self.params, x, u, next)
    }
}

#[inline]
fn pendulum_eval<T: Real>(p: &PendulumParams, x: &[T], u: &[T], next: &mut [T]) {
    let c = T::from_f64;
    let inertia = p.mass * p.length * p.length;
    let acc =
        -c(p.gravity / p.length) * x[0].sin() - c(p.damping / inertia) * x[1] + u[0] / c(inertia);
    let omega_next = x[1] + c(p.dt) * acc;
    next[0] = x[0] + c(p.dt) * omega_next;
    next[1] = omega_next;
}

// ---------------------------------------------------------------------------
// Double integrator
// ---------------------------------------------------------------------------

/// 1-D point mass, state `(position, velocity)`, control = acceleration.
///
/// Under semi-implicit Euler this is `x' = A x + B u` with
/// `A = [[1, dt], [0, 1]]` and `B = [dt², dt]ᵀ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DoubleIntegrator {
    pub dt: f64,
}

impl DoubleIntegrator {
    pub fn new(dt: f64) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::InvalidParameter("dt must be > 0".into()));
        }
        Ok(Self { dt })
    }
}

impl Dynamics for DoubleIntegrator {
    fn state_dim(&self) -> usize {
        2
    }

    fn control_dim(&self) -> usize {
        1
    }

    fn dt(&self) -> f64 {
        self.dt
    }

    fn eval<T: Real>(&self, x: &[T], u: &[T], next: &mut [T]) {
        let dt = T::from_f64(self.dt);
        let vel = x[1] + dt * u[0];
        next[0] = x[0] + dt * vel;
        next[1] = vel;
    }
}

// ---------------------------------------------------------------------------
// Config-selectable system
// ---------------------------------------------------------------------------

/// Any of the built-in systems, selectable from a config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum System {
    CartPole(CartPoleParams),
    Pendulum(PendulumParams),
    DoubleIntegrator { dt: f64 },
}

impl System {
    pub fn validate(&self) -> Result<()> {
        match self {
            System::CartPole(p) => CartPole::new(p.clone()).map(|_| ()),
            System::Pendulum(p) => Pendulum::new(p.clone()).map(|_| ()),
            System::DoubleIntegrator { dt } => DoubleIntegrator::new(*dt).map(|_| ()),
        }
    }

    /// State indices holding angles.
    pub fn angle_dims(&self) -> Vec<usize> {
        match self {
            System::CartPole(_) => vec![2],
            System::Pendulum(_) => vec![0],
            System::DoubleIntegrator { .. } => vec![],
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            System::CartPole(_) => "cart_pole",
            System::Pendulum(_) => "pendulum",
            System::DoubleIntegrator { .. } => "double_integrator",
        }
    }
}

impl Dynamics for System {
    fn state_dim(&self) -> usize {
        match self {
            System::CartPole(_) => 4,
            System::Pendulum(_) | System::DoubleIntegrator { .. } => 2,
        }
    }

    fn control_dim(&self) -> usize {
        1
    }

    fn dt(&self) -> f64 {
        match self {
            System::CartPole(p) => p.dt,
            System::Pendulum(p) => p.dt,
            System::DoubleIntegrator { dt } => *dt,
        }
    }

    #[inline]
    fn eval<T: Real>(&self, x: &[T], u: &[T], next: &mut [T]) {
        match self {
            System::CartPole(p) => cart_pole_eval(p, x, u, next),
            System::Pendulum(p) => pendulum_eval(p, x, u, next),
            System::DoubleIntegrator { dt } => DoubleIntegrator { dt: *dt }.eval(x, u, next),
        }
    }
}
