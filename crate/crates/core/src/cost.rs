//! Quadratic running, terminal and reference-tracking costs.
//!
//! Running cost: `e_xᵀ Q e_x + e_uᵀ R e_u` with `e_x = x − x_target` (wrapped
//! to `(−π, π]` on angle dimensions) and `e_u = u − u_ref[t]`, or `u` when no
//! reference sequence is set. Terminal cost: `e_xᵀ Q_T e_x`.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::dynamics::{Control, State};
use crate::error::{check_dim, Error, Result};

type Buf = SmallVec<[f64; 8]>;

/// Wraps an angle to `(−π, π]`.
#[inline]
pub fn wrap_angle(a: f64) -> f64 {
    PI - (PI - a).rem_euclid(2.0 * PI)
}

/// Cost weights, target and optional control reference.
#[derive(Clone, Debug, PartialEq)]
pub struct CostSpec {
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    q_terminal: DMatrix<f64>,
    target: Vec<f64>,
    /// Row-major `horizon × m` when present.
    u_ref: Option<Vec<f64>>,
    angle_dims: Vec<usize>,
    is_angle: Vec<bool>,
}

fn check_psd(name: &str, m: &DMatrix<f64>, dim: usize) -> Result<()> {
    if m.nrows() != dim || m.ncols() != dim {
        return Err(Error::InvalidParameter(format!(
            "{name} must be {dim}x{dim}, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("cost weight matrix"));
    }
    let scale = m.amax().max(1.0);
    if (m - m.transpose()).amax() > 1e-12 * scale {
        return Err(Error::InvalidParameter(format!("{name} is not symmetric")));
    }
    if dim > 0 {
        let min_eig = m.clone().symmetric_eigenvalues().min();
        if min_eig < -1e-10 * scale {
            return Err(Error::InvalidParameter(format!(
                "{name} is not positive semidefinite (min eigenvalue {min_eig})"
            )));
        }
    }
    Ok(())
}

#[inline]
fn quad_form(m: &DMatrix<f64>, e: &[f64]) -> f64 {
    let n = e.len();
    let mut acc = 0.0;
    for j in 0..n {
        let mut col = 0.0;
        for i in 0..n {
            col += m[(i, j)] * e[i];
        }
        acc += e[j] * col;
    }
    acc
}

impl CostSpec {
    pub fn new(
        q: DMatrix<f64>,
        r: DMatrix<f64>,
        q_terminal: DMatrix<f64>,
        target: State,
    ) -> Result<Self> {
        let n = target.dim();
        check_psd("Q", &q, n)?;
        check_psd("Q_T", &q_terminal, n)?;
        check_psd("R", &r, r.nrows())?;
        if target.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("cost target"));
        }
        Ok(Self {
            q,
            r,
            q_terminal,
            target: target.into_vec(),
            u_ref: None,
            angle_dims: Vec::new(),
            is_angle: vec![false; n],
        })
    }

    /// Diagonal weights.
    pub fn diagonal(q: &[f64], r: &[f64], q_terminal: &[f64], target: State) -> Result<Self> {
        Self::new(
            DMatrix::from_diagonal(&q.to_vec().into()),
            DMatrix::from_diagonal(&r.to_vec().into()),
            DMatrix::from_diagonal(&q_terminal.to_vec().into()),
            target,
        )
    }

    /// Marks state dimensions whose error is wrapped to `(−π, π]`.
    pub fn with_angle_dims(mut self, dims: &[usize]) -> Result<Self> {
        let n = self.state_dim();
        let mut is_angle = vec![false; n];
        for &d in dims {
            if d >= n {
                return Err(Error::InvalidParameter(format!(
                    "angle dimension {d} out of range for state dim {n}"
                )));
            }
            is_angle[d] = true;
        }
        self.angle_dims = dims.to_vec();
        self.is_angle = is_angle;
        Ok(self)
    }

    /// Tracks `u_ref[t]` instead of zero in the control term.
    pub fn with_reference(mut self, u_ref: &[Control]) -> Result<Self> {
        let m = self.control_dim();
        let mut flat = Vec::with_capacity(u_ref.len() * m);
        for u in u_ref {
            check_dim("reference control", m, u.dim())?;
            if u.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("reference control"));
            }
            flat.extend_from_slice(u);
        }
        self.u_ref = Some(flat);
        Ok(self)
    }

    pub fn state_dim(&self) -> usize {
        self.target.len()
    }

    pub fn control_dim(&self) -> usize {
        self.r.nrows()
    }

    pub fn target(&self) -> &[f64] {
        &self.target
    }

    pub fn angle_dims(&self) -> &[usize] {
        &self.angle_dims
    }

    /// Length of the reference sequence, when one is set.
    pub fn reference_horizon(&self) -> Option<usize> {
        let m = self.control_dim().max(1);
        self.u_ref.as_ref().map(|r| r.len() / m)
    }

    /// Fails when a reference is present but shorter than `horizon`.
    pub fn check_horizon(&self, horizon: usize) -> Result<()> {
        match self.reference_horizon() {
            Some(len) if len != horizon => Err(Error::DimensionMismatch {
                context: "reference control horizon",
                expected: horizon,
                actual: len,
            }),
            _ => Ok(()),
        }
    }

    #[inline]
    fn state_error(&self, x: &[f64]) -> Buf {
        x.iter()
            .zip(&self.target)
            .zip(&self.is_angle)
            .map(|((&xi, &ti), &angle)| if angle { wrap_angle(xi - ti) } else { xi - ti })
            .collect()
    }

    #[inline]
    fn control_error(&self, u: &[f64], t: usize) -> Buf {
        match &self.u_ref {
            Some(r) => {
                let m = u.len();
                u.iter().zip(&r[t * m..(t + 1) * m]).map(|(a, b)| a - b).collect()
            }
            None => u.iter().copied().collect(),
        }
    }

    /// Unchecked running cost.
    #[inline]
    pub(crate) fn running(&self, x: &[f64], u: &[f64], t: usize) -> f64 {
        quad_form(&self.q, &self.state_error(x)) + quad_form(&self.r, &self.control_error(u, t))
    }

    /// Unchecked terminal cost.
    #[inline]
    pub(crate) fn terminal(&self, x: &[f64]) -> f64 {
        quad_form(&self.q_terminal, &self.state_error(x))
    }

    /// Unchecked `2Q e_x` and `2R e_u`.
    #[inline]
    pub(crate) fn running_gradients_into(
        &self,
        x: &[f64],
        u: &[f64],
        t: usize,
        d_state: &mut [f64],
        d_control: &mut [f64],
    ) {
        let ex = self.state_error(x);
        for (i, out) in d_state.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (j, e) in ex.iter().enumerate() {
                acc += self.q[(i, j)] * e;
            }
            *out = 2.0 * acc;
        }
        let eu = self.control_error(u, t);
        for (i, out) in d_control.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (j, e) in eu.iter().enumerate() {
                acc += self.r[(i, j)] * e;
            }
            *out = 2.0 * acc;
        }
    }

    /// Unchecked cost-to-go over flat `(N+1)×n` states and `N×m` controls.
    /// Running costs are summed in time order, then the terminal cost is added.
    #[inline]
    pub(crate) fn trajectory(&self, states: &[f64], controls: &[f64]) -> f64 {
        let (n, m) = (self.state_dim(), self.control_dim());
        let horizon = controls.len() / m;
        let mut total = 0.0;
        for t in 0..horizon {
            total += self.running(&states[t * n..(t + 1) * n], &controls[t * m..(t + 1) * m], t);
        }
        total + self.terminal(&states[horizon * n..(horizon + 1) * n])
    }

    fn check_time(&self, t: usize) -> Result<()> {
        match self.reference_horizon() {
            Some(len) if t >= len => Err(Error::InvalidParameter(format!(
                "time index {t} beyond reference horizon {len}"
            ))),
            _ => Ok(()),
        }
    }
}

/// `e_xᵀ Q e_x + e_uᵀ R e_u` at time index `t`.
pub fn running_cost(spec: &CostSpec, state: &State, control: &Control, t: usize) -> Result<f64> {
    check_dim("cost state", spec.state_dim(), state.dim())?;
    check_dim("cost control", spec.control_dim(), control.dim())?;
    spec.check_time(t)?;
    Ok(spec.running(state, control, t))
}

/// `e_xᵀ Q_T e_x`.
pub fn terminal_cost(spec: &CostSpec, state: &State) -> Result<f64> {
    check_dim("cost state", spec.state_dim(), state.dim())?;
    Ok(spec.terminal(state))
}

/// `S(τ) = φ(x_N) + Σ_{t<N} L(x_t, u_t, t)`.
pub fn cost_to_go(spec: &CostSpec, states: &[State], controls: &[Control]) -> Result<f64> {
    check_dim("cost-to-go states", controls.len() + 1, states.len())?;
    if controls.is_empty() {
        return Err(Error::InvalidParameter("cost-to-go needs at least one control".into()));
    }
    let mut total = 0.0;
    for (t, (x, u)) in states.iter().zip(controls).enumerate() {
        total += running_cost(spec, x, u, t)?;
    }
    Ok(total + terminal_cost(spec, states.last().expect("non-empty"))?)
}

/// Gradients of [`running_cost`] with respect to state and control.
/// Angle wrapping is treated as locally the identity.
pub fn running_cost_gradients(
    spec: &CostSpec,
    state: &State,
    control: &Control,
    t: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_dim("cost state", spec.state_dim(), state.dim())?;
    check_dim("cost control", spec.control_dim(), control.dim())?;
    spec.check_time(t)?;
    let mut dx = vec![0.0; spec.state_dim()];
    let mut du = vec![0.0; spec.control_dim()];
    spec.running_gradients_into(state, control, t, &mut dx, &mut du);
    Ok((dx, du))
}

/// Weight matrix as written in a config file: a diagonal or a full matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Weights {
    Diagonal(Vec<f64>),
    Full(Vec<Vec<f64>>),
}

impl Weights {
    fn to_matrix(&self) -> Result<DMatrix<f64>> {
        match self {
            Weights::Diagonal(d) => Ok(DMatrix::from_diagonal(&d.clone().into())),
            Weights::Full(rows) => {
                let n = rows.len();
                if rows.iter().any(|r| r.len() != n) {
                    return Err(Error::Config("weight matrix must be square".into()));
                }
                Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
            }
        }
    }
}

/// Serializable cost section of the experiment config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostConfig {
    pub q: Weights,
    pub r: Weights,
    pub q_terminal: Weights,
    pub target: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u_ref: Option<Vec<Vec<f64>>>,
    /// Defaults to the system's angle dimensions when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub angle_dims: Option<Vec<usize>>,
}

impl CostConfig {
    /// Swing-up weights for the cart-pole: `Q = diag(1.25, 1, 12, 0.25)`,
    /// `R = 1e-3`, `Q_T = 10 Q`, target upright at the origin.
    pub fn cart_pole_default() -> Self {
        let q = vec![1.25, 1.0, 12.0, 0.25];
        Self {
            q_terminal: Weights::Diagonal(q.iter().map(|v| 10.0 * v).collect()),
            q: Weights::Diagonal(q),
            r: Weights::Diagonal(vec![1e-3]),
            target: vec![0.0; 4],
            u_ref: None,
            angle_dims: None,
        }
    }

    pub fn build(&self, default_angle_dims: &[usize]) -> Result<CostSpec> {
        let mut spec = CostSpec::new(
            self.q.to_matrix()?,
            self.r.to_matrix()?,
            self.q_terminal.to_matrix()?,
            State::new(self.target.clone()),
        )?
        .with_angle_dims(self.angle_dims.as_deref().unwrap_or(default_angle_dims))?;
        if let Some(u_ref) = &self.u_ref {
            let controls: Vec<Control> = u_ref.iter().map(|u| Control::new(u.clone())).collect();
            spec = spec.with_reference(&controls)?;
        }
        Ok(spec)
    }
}
