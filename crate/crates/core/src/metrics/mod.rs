//! Trial records, response metrics, summaries and Welch's t-test.

pub mod stats;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize};

use crate::cost::wrap_angle;
use crate::dynamics::{Control, State};
use crate::error::{Error, Result};

/// Closed-loop log of one episode. `states[i]` is observed at `times[i]`;
/// `controls[i]` is applied between `states[i]` and `states[i + 1]` after
/// `step_wall_times[i]` seconds of planning.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialRecord {
    times: Vec<f64>,
    states: Vec<State>,
    controls: Vec<Control>,
    step_wall_times: Vec<f64>,
    angle_dims: Vec<usize>,
    diverged: bool,
}

impl TrialRecord {
    pub(crate) fn start(x0: State) -> Self {
        Self {
            times: vec![0.0],
            states: vec![x0],
            controls: Vec::new(),
            step_wall_times: Vec::new(),
            angle_dims: Vec::new(),
            diverged: false,
        }
    }

    pub(crate) fn push(&mut self, t: f64, state: State, control: Control, wall: f64) {
        self.times.push(t);
        self.states.push(state);
        self.controls.push(control);
        self.step_wall_times.push(wall);
    }

    pub(crate) fn mark_diverged(&mut self) {
        self.diverged = true;
    }

    pub fn from_parts(
        times: Vec<f64>,
        states: Vec<State>,
        controls: Vec<Control>,
        step_wall_times: Vec<f64>,
    ) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::EmptyRecord);
        }
        if times.len() != states.len()
            || controls.len() + 1 != states.len()
            || step_wall_times.len() != controls.len()
        {
            return Err(Error::InvalidParameter(format!(
                "record lengths inconsistent: {} times, {} states, {} controls, {} wall times",
                times.len(),
                states.len(),
                controls.len(),
                step_wall_times.len()
            )));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidParameter(
                "record times must be strictly increasing".into(),
            ));
        }
        let diverged = states.iter().any(|s| s.iter().any(|v| !v.is_finite()));
        Ok(Self {
            times,
            states,
            controls,
            step_wall_times,
            angle_dims: Vec::new(),
            diverged,
        })
    }

    /// Marks state dimensions whose errors are wrapped to `(−π, π]`.
    pub fn with_angle_dims(mut self, dims: &[usize]) -> Self {
        self.angle_dims = dims.to_vec();
        self
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> &[State] {
        &self.states
    }

    pub fn controls(&self) -> &[Control] {
        &self.controls
    }

    pub fn step_wall_times(&self) -> &[f64] {
        &self.step_wall_times
    }

    pub fn angle_dims(&self) -> &[usize] {
        &self.angle_dims
    }

    /// True if the state became non-finite.
    pub fn diverged(&self) -> bool {
        self.diverged
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    fn errors(&self, index: usize, target: f64) -> Result<Vec<f64>> {
        if self.states.is_empty() {
            return Err(Error::EmptyRecord);
        }
        let dim = self.states[0].dim();
        if index >= dim {
            return Err(Error::InvalidParameter(format!(
                "signal index {index} out of range for state dimension {dim}"
            )));
        }
        let angle = self.angle_dims.contains(&index);
        Ok(self
            .states
            .iter()
            .map(|s| {
                let e = s[index] - target;
                if angle {
                    wrap_angle(e)
                } else {
                    e
                }
            })
            .collect())
    }
}

/// Mean over all recorded states of the squared error of one signal.
pub fn mse(record: &TrialRecord, signal_index: usize, target: f64) -> Result<f64> {
    let errors = record.errors(signal_index, target)?;
    Ok(errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandMode {
    /// `band` is the half-width in signal units.
    Absolute,
    /// Half-width is `band · range`.
    FractionOfRange,
}

/// Settling band `|signal − target| ≤ half_width`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SettlingCriterion {
    pub signal_index: usize,
    #[serde(default)]
    pub target: f64,
    pub band: f64,
    #[serde(default = "default_mode")]
    pub mode: BandMode,
    /// Step range for [`BandMode::FractionOfRange`]; defaults to `π`.
    #[serde(default = "default_range")]
    pub range: f64,
}

fn default_mode() -> BandMode {
    BandMode::Absolute
}

fn default_range() -> f64 {
    std::f64::consts::PI
}

impl SettlingCriterion {
    pub fn absolute(signal_index: usize, target: f64, band: f64) -> Self {
        Self {
            signal_index,
            target,
            band,
            mode: BandMode::Absolute,
            range: default_range(),
        }
    }

    pub fn fraction_of_range(signal_index: usize, target: f64, fraction: f64, range: f64) -> Self {
        Self {
            signal_index,
            target,
            band: fraction,
            mode: BandMode::FractionOfRange,
            range,
        }
    }

    pub fn half_width(&self) -> f64 {
        match self.mode {
            BandMode::Absolute => self.band,
            BandMode::FractionOfRange => self.band * self.range,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let hw = self.half_width();
        if !(hw.is_finite() && hw > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "settling band must be > 0, got {hw}"
            )));
        }
        Ok(())
    }
}

/// Earliest recorded time after which the signal never leaves the band.
/// `None` (non-converged) unless at least the final quarter of the samples
/// lies inside the band.
pub fn settling_time(record: &TrialRecord, criterion: &SettlingCriterion) -> Result<Option<f64>> {
    criterion.validate()?;
    let errors = record.errors(criterion.signal_index, criterion.target)?;
    let hw = criterion.half_width();
    let first_settled = match errors.iter().rposition(|e| !(e.abs() <= hw)) {
        None => 0,
        Some(last_out) => last_out + 1,
    };
    let len = errors.len();
    let final_quarter = len - len.div_ceil(4);
    if first_settled > final_quarter {
        return Ok(None);
    }
    Ok(Some(record.times[first_settled]))
}

/// Welch's unequal-variance t-test of "mean(a) < mean(b)".
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WelchResult {
    pub t: f64,
    pub dof: f64,
    /// One-tailed `P(T < t)`.
    pub p: f64,
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

pub fn welch_t_test_one_tailed(a: &[f64], b: &[f64]) -> Result<WelchResult> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::DegenerateVariance(
            "each group needs at least two values",
        ));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("t-test sample"));
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (sa, sb) = (va / a.len() as f64, vb / b.len() as f64);
    let se2 = sa + sb;
    if se2 <= 0.0 {
        return Err(Error::DegenerateVariance("both groups have zero variance"));
    }
    let t = (ma - mb) / se2.sqrt();
    let dof = se2 * se2 / (sa * sa / (a.len() - 1) as f64 + sb * sb / (b.len() - 1) as f64);
    Ok(WelchResult {
        t,
        dof,
        p: stats::student_t_cdf(t, dof),
    })
}

/// Mean, sample std and median over converged values; `None` entries are
/// counted as non-converged and excluded.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricSummary {
    pub mean: f64,
    pub std: f64,
    pub median: f64,
    pub n: usize,
    pub n_nonconverged: usize,
}

pub fn summarize(values: &[Option<f64>]) -> MetricSummary {
    let mut xs: Vec<f64> = values.iter().flatten().copied().collect();
    let n = xs.len();
    let n_nonconverged = values.len() - n;
    if n == 0 {
        return MetricSummary {
            mean: f64::NAN,
            std: f64::NAN,
            median: f64::NAN,
            n,
            n_nonconverged,
        };
    }
    let (mean, var) = mean_var(&xs);
    xs.sort_by(f64::total_cmp);
    let median = if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    };
    MetricSummary {
        mean,
        std: if n > 1 { var.sqrt() } else { 0.0 },
        median,
        n,
        n_nonconverged,
    }
}

/// A named per-trial metric.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MetricKind {
    Mse {
        signal_index: usize,
        #[serde(default)]
        target: f64,
    },
    Settling(SettlingCriterion),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: MetricKind,
}

impl<'de> Deserialize<'de> for MetricSpec {
    fn deserialize<D: Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let mut map = serde_json::Map::deserialize(de)?;
        let name = match map.remove("name") {
            Some(serde_json::Value::String(s)) => s,
            _ => return Err(D::Error::custom("metric needs a string \"name\"")),
        };
        let kind = MetricKind::deserialize(serde_json::Value::Object(map)).map_err(D::Error::custom)?;
        Ok(Self { name, kind })
    }
}

impl MetricSpec {
    /// `None` for a non-converged settling time or a diverged trial.
    pub fn evaluate(&self, record: &TrialRecord) -> Result<Option<f64>> {
        if record.diverged() {
            return Ok(None);
        }
        match &self.kind {
            MetricKind::Mse {
                signal_index,
                target,
            } => mse(record, *signal_index, *target).map(Some),
            MetricKind::Settling(c) => settling_time(record, c),
        }
    }

    /// MSE of x and θ plus the x (0.25 m, 0.5 m) and θ (2/5/10 % of π)
    /// settling times of the cart-pole.
    pub fn cart_pole_defaults() -> Vec<MetricSpec> {
        let pi = std::f64::consts::PI;
        let mse = |name: &str, signal_index| MetricSpec {
            name: name.into(),
            kind: MetricKind::Mse {
                signal_index,
                target: 0.0,
            },
        };
        let settle = |name: &str, c| MetricSpec {
            name: name.into(),
            kind: MetricKind::Settling(c),
        };
        vec![
            mse("mse_x", 0),
            settle("ts_x_0.25m", SettlingCriterion::absolute(0, 0.0, 0.25)),
            settle("ts_x_0.5m", SettlingCriterion::absolute(0, 0.0, 0.5)),
            mse("mse_theta", 2),
            settle("ts_theta_2pct", SettlingCriterion::fraction_of_range(2, 0.0, 0.02, pi)),
            settle("ts_theta_5pct", SettlingCriterion::fraction_of_range(2, 0.0, 0.05, pi)),
            settle("ts_theta_10pct", SettlingCriterion::fraction_of_range(2, 0.0, 0.10, pi)),
        ]
    }
}
