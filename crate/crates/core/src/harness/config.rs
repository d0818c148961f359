use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::controller::{Algorithm, ControllerConfig, TerminalInit};
use crate::cost::{CostConfig, CostSpec};
use crate::dynamics::{Dynamics, State, System};
use crate::error::{Error, Result};
use crate::metrics::MetricSpec;
use crate::svgd::SvgdConfig;

/// Receding-horizon tail initializer selectable from a file. Custom hooks are
/// only available through the library API.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailInit {
    #[default]
    Zero,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerSection {
    pub samples: usize,
    pub horizon: usize,
    pub lambda: f64,
    pub sigma: f64,
    pub terminal_init: TailInit,
}

impl Default for ControllerSection {
    fn default() -> Self {
        let d = ControllerConfig::default();
        Self {
            samples: d.samples,
            horizon: d.horizon,
            lambda: d.lambda,
            sigma: d.sigma,
            terminal_init: TailInit::Zero,
        }
    }
}

fn default_algos() -> Vec<Algorithm> {
    vec![Algorithm::Mppi, Algorithm::Soppi]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    #[serde(default = "default_algos")]
    pub algos: Vec<Algorithm>,
    pub n_trials: usize,
    /// Trial `i` of every algorithm uses seed `base_seed + i`.
    pub base_seed: u64,
    /// Episode length in seconds.
    pub t_total: f64,
    pub output_dir: PathBuf,
    /// Defaults to the hanging cart-pole / resting state of the system.
    pub initial_state: Option<Vec<f64>>,
    /// Write per-step planning time; when false `wall_ms` is recorded as 0 so
    /// record files are byte-reproducible.
    pub record_timing: bool,
    /// Defaults to the cart-pole metric set for the cart-pole, none otherwise.
    pub metrics: Option<Vec<MetricSpec>>,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            algos: default_algos(),
            n_trials: 5,
            base_seed: 0,
            t_total: 20.0,
            output_dir: PathBuf::from("runs/latest"),
            initial_state: None,
            record_timing: true,
            metrics: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: System,
    pub cost: CostConfig,
    #[serde(default)]
    pub controller: ControllerSection,
    #[serde(default)]
    pub svgd: SvgdConfig,
    #[serde(default)]
    pub experiment: ExperimentSection,
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.system.validate()?;
        let cost = self.cost_spec()?;
        if cost.state_dim() != self.system.state_dim() || cost.control_dim() != self.system.control_dim() {
            return Err(Error::Config(format!(
                "cost dimensions {}x{} do not match system {}x{}",
                cost.state_dim(),
                cost.control_dim(),
                self.system.state_dim(),
                self.system.control_dim()
            )));
        }
        self.controller_config(0).validate()?;
        let ex = &self.experiment;
        if ex.algos.is_empty() {
            return Err(Error::Config("experiment.algos must not be empty".into()));
        }
        if ex.n_trials == 0 {
            return Err(Error::Config("experiment.n_trials must be >= 1".into()));
        }
        if self.steps() == 0 {
            return Err(Error::Config(format!(
                "experiment.t_total {} is shorter than one step",
                ex.t_total
            )));
        }
        let x0 = self.initial_state();
        if x0.dim() != self.system.state_dim() || x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config(format!(
                "initial_state must have {} finite entries",
                self.system.state_dim()
            )));
        }
        for m in self.metrics() {
            if let crate::metrics::MetricKind::Settling(c) = &m.kind {
                c.validate()?;
            }
        }
        Ok(())
    }

    pub fn cost_spec(&self) -> Result<CostSpec> {
        self.cost.build(&self.system.angle_dims())
    }

    pub fn controller_config(&self, seed: u64) -> ControllerConfig {
        let c = &self.controller;
        ControllerConfig {
            samples: c.samples,
            horizon: c.horizon,
            lambda: c.lambda,
            sigma: c.sigma,
            seed,
            svgd: self.svgd.clone(),
            terminal_init: match c.terminal_init {
                TailInit::Zero => TerminalInit::Zero,
            },
        }
    }

    pub fn steps(&self) -> usize {
        let t = self.experiment.t_total / self.system.dt();
        if t.is_finite() && t > 0.0 {
            t.round() as usize
        } else {
            0
        }
    }

    pub fn initial_state(&self) -> State {
        match (&self.experiment.initial_state, &self.system) {
            (Some(x), _) => State::new(x.clone()),
            (None, System::CartPole(_)) => State::new(vec![0.0, 0.0, std::f64::consts::PI, 0.0]),
            (None, sys) => State::zeros(sys.state_dim()),
        }
    }

    pub fn metrics(&self) -> Vec<MetricSpec> {
        match (&self.experiment.metrics, &self.system) {
            (Some(m), _) => m.clone(),
            (None, System::CartPole(_)) => MetricSpec::cart_pole_defaults(),
            (None, _) => Vec::new(),
        }
    }

    /// The cart-pole swing-up battery with default weights.
    pub fn cart_pole_default() -> Self {
        Self {
            system: System::CartPole(Default::default()),
            cost: CostConfig::cart_pole_default(),
            controller: ControllerSection::default(),
            svgd: SvgdConfig::default(),
            experiment: ExperimentSection::default(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "system": {"kind": "double_integrator", "dt": 0.1},
        "cost": {"q": [1.0, 0.1], "r": [0.01], "q_terminal": [1.0, 0.1], "target": [1.0, 0.0]}
    }"#;

    #[test]
    fn minimal_config_uses_defaults() {
        let cfg = ExperimentConfig::from_json(MINIMAL).unwrap();
        assert_eq!(cfg.experiment.n_trials, 5);
        assert_eq!(cfg.steps(), 200);
        assert_eq!(cfg.initial_state().as_slice(), &[0.0, 0.0]);
        assert!(cfg.metrics().is_empty());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = MINIMAL.replacen('{', r#"{"extra": 1,"#, 1);
        assert!(ExperimentConfig::from_json(&bad).is_err());
        let bad = MINIMAL.replace(r#""dt": 0.1"#, r#""dt": 0.1, "mass": 2"#);
        assert!(ExperimentConfig::from_json(&bad).is_err());
        let bad = MINIMAL.replace("}\n    }", r#"}, "controller": {"samples": 10, "temp": 1}}"#);
        assert!(ExperimentConfig::from_json(&bad).is_err());
    }

    #[test]
    fn invalid_values_are_rejected() {
        let mut cfg = ExperimentConfig::from_json(MINIMAL).unwrap();
        cfg.experiment.algos.clear();
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::from_json(MINIMAL).unwrap();
        cfg.experiment.t_total = 0.01;
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::from_json(MINIMAL).unwrap();
        cfg.experiment.initial_state = Some(vec![0.0]);
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::from_json(MINIMAL).unwrap();
        cfg.controller.lambda = 0.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn cart_pole_default_round_trips() {
        let cfg = ExperimentConfig::cart_pole_default();
        cfg.validate().unwrap();
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        assert_eq!(ExperimentConfig::from_json(&text).unwrap(), cfg);
        assert_eq!(cfg.metrics().len(), 7);
        assert_eq!(cfg.steps(), 1000);
    }
}
