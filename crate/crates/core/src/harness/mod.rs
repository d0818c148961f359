//! Paired-seed experiment batteries.
//!
//! A run directory holds:
//!
//! - `manifest.json`: config snapshot, version, seeds, per-trial files,
//!   timestamps and a completion flag;
//! - `records/<algo>_trial<iii>.csv`: one closed-loop record per trial;
//! - `metrics.csv`: per-trial metric values (empty when non-converged);
//! - `summary.csv`: `algo, metric, mean, std, median, n, n_nonconverged`;
//! - `pvalues.csv`: one-tailed Welch tests for every ordered algorithm pair.

mod config;
mod records;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{ControllerSection, ExperimentConfig, ExperimentSection, TailInit};
pub use records::{read_record, record_header, write_record};

use crate::controller::{run_episode, Algorithm};
use crate::error::{Error, Result};
use crate::metrics::{summarize, welch_t_test_one_tailed, MetricSpec, MetricSummary, TrialRecord};
use records::fmt_f64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialEntry {
    pub algo: Algorithm,
    pub trial: usize,
    pub seed: u64,
    /// Relative to the run directory.
    pub file: PathBuf,
    pub diverged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub config: ExperimentConfig,
    pub seeds: Vec<u64>,
    pub trials: Vec<TrialEntry>,
    /// Seconds since the Unix epoch.
    pub started_at: f64,
    pub finished_at: Option<f64>,
    pub complete: bool,
    pub error: Option<String>,
}

impl RunManifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(dir.join(MANIFEST))?;
        Ok(serde_json::from_str(&text)?)
    }

    fn save(&self, dir: &Path) -> Result<()> {
        std::fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

const MANIFEST: &str = "manifest.json";

fn now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0.0, |d| d.as_secs_f64())
}

pub fn record_file(algo: Algorithm, trial: usize) -> PathBuf {
    PathBuf::from("records").join(format!("{algo}_trial{trial:03}.csv"))
}

/// Runs every `(algo, trial)` pair of the battery, in parallel, writing into
/// `config.experiment.output_dir`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunManifest> {
    config.validate()?;
    let dir = config.experiment.output_dir.clone();
    std::fs::create_dir_all(dir.join("records"))?;
    let seeds: Vec<u64> = (0..config.experiment.n_trials)
        .map(|i| config.experiment.base_seed.wrapping_add(i as u64))
        .collect();
    let mut manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: config.clone(),
        seeds: seeds.clone(),
        trials: Vec::new(),
        started_at: now(),
        finished_at: None,
        complete: false,
        error: None,
    };
    manifest.save(&dir)?;

    let cost = config.cost_spec()?;
    let x0 = config.initial_state();
    let steps = config.steps();
    let jobs: Vec<(Algorithm, usize, u64)> = config
        .experiment
        .algos
        .iter()
        .flat_map(|&a| seeds.iter().enumerate().map(move |(i, &s)| (a, i, s)))
        .collect();
    let outcomes: Vec<Result<TrialEntry>> = jobs
        .par_iter()
        .map(|&(algo, trial, seed)| {
            let cfg = config.controller_config(seed);
            let record = run_episode(&config.system, &cost, &cfg, &x0, algo, steps)?;
            let file = record_file(algo, trial);
            write_record(&dir.join(&file), &record, config.experiment.record_timing)?;
            log::info!("{algo} trial {trial} (seed {seed}) done");
            Ok(TrialEntry {
                algo,
                trial,
                seed,
                file,
                diverged: record.diverged(),
            })
        })
        .collect();

    let mut first_error = None;
    for outcome in outcomes {
        match outcome {
            Ok(entry) => manifest.trials.push(entry),
            Err(e) => {
                first_error.get_or_insert(e);
            }
        }
    }
    manifest.finished_at = Some(now());
    if let Some(e) = first_error {
        manifest.error = Some(e.to_string());
        manifest.save(&dir)?;
        return Err(e);
    }
    manifest.complete = true;
    manifest.save(&dir)?;
    summarize_dir(&dir)?;
    Ok(manifest)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub algo: Algorithm,
    pub metric: String,
    pub summary: MetricSummary,
}

/// Welch test of "`algo_a` has the smaller metric than `algo_b`".
#[derive(Clone, Debug, PartialEq)]
pub struct PValueRow {
    pub metric: String,
    pub algo_a: Algorithm,
    pub algo_b: Algorithm,
    /// `None` when either group has fewer than two converged values or no
    /// variance.
    pub test: Option<crate::metrics::WelchResult>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Summary {
    pub rows: Vec<SummaryRow>,
    pub p_values: Vec<PValueRow>,
}

impl Summary {
    pub fn get(&self, algo: Algorithm, metric: &str) -> Option<&MetricSummary> {
        self.rows
            .iter()
            .find(|r| r.algo == algo && r.metric == metric)
            .map(|r| &r.summary)
    }

    pub fn p_value(&self, metric: &str, a: Algorithm, b: Algorithm) -> Option<f64> {
        self.p_values
            .iter()
            .find(|r| r.metric == metric && r.algo_a == a && r.algo_b == b)
            .and_then(|r| r.test.map(|t| t.p))
    }
}

/// Metric values per algorithm, in trial order.
type MetricTable = BTreeMap<Algorithm, Vec<(usize, u64, Vec<Option<f64>>)>>;

fn load_metrics(dir: &Path, manifest: &RunManifest, metrics: &[MetricSpec]) -> Result<MetricTable> {
    let angle_dims = manifest.config.system.angle_dims();
    let mut table = MetricTable::new();
    let mut trials = manifest.trials.clone();
    trials.sort_by_key(|t| (t.algo, t.trial));
    for t in &trials {
        let record: TrialRecord = read_record(&dir.join(&t.file), &angle_dims)?;
        let values = metrics
            .iter()
            .map(|m| m.evaluate(&record))
            .collect::<Result<Vec<_>>>()?;
        table.entry(t.algo).or_default().push((t.trial, t.seed, values));
    }
    Ok(table)
}

/// Recomputes metrics from the records of a run directory and rewrites
/// `metrics.csv`, `summary.csv` and `pvalues.csv`.
pub fn summarize_dir(dir: &Path) -> Result<Summary> {
    let manifest = RunManifest::load(dir)?;
    let metrics = manifest.config.metrics();
    let table = load_metrics(dir, &manifest, &metrics)?;

    let mut w = csv::Writer::from_path(dir.join("metrics.csv"))?;
    w.write_record(["algo", "trial", "seed", "metric", "value"])?;
    for (algo, trials) in &table {
        for (trial, seed, values) in trials {
            for (m, v) in metrics.iter().zip(values) {
                w.write_record([
                    algo.name(),
                    &trial.to_string(),
                    &seed.to_string(),
                    &m.name,
                    &v.map(fmt_f64).unwrap_or_default(),
                ])?;
            }
        }
    }
    w.flush()?;

    let column = |algo: &Algorithm, idx: usize| -> Vec<Option<f64>> {
        table[algo].iter().map(|(_, _, v)| v[idx]).collect()
    };
    let mut summary = Summary::default();
    for algo in table.keys() {
        for (idx, m) in metrics.iter().enumerate() {
            summary.rows.push(SummaryRow {
                algo: *algo,
                metric: m.name.clone(),
                summary: summarize(&column(algo, idx)),
            });
        }
    }
    for (idx, m) in metrics.iter().enumerate() {
        for a in table.keys() {
            for b in table.keys().filter(|b| *b != a) {
                let xa: Vec<f64> = column(a, idx).into_iter().flatten().collect();
                let xb: Vec<f64> = column(b, idx).into_iter().flatten().collect();
                summary.p_values.push(PValueRow {
                    metric: m.name.clone(),
                    algo_a: *a,
                    algo_b: *b,
                    test: welch_t_test_one_tailed(&xa, &xb).ok(),
                });
            }
        }
    }

    let mut w = csv::Writer::from_path(dir.join("summary.csv"))?;
    w.write_record(["algo", "metric", "mean", "std", "median", "n", "n_nonconverged"])?;
    for r in &summary.rows {
        let s = &r.summary;
        w.write_record([
            r.algo.name(),
            &r.metric,
            &fmt_f64(s.mean),
            &fmt_f64(s.std),
            &fmt_f64(s.median),
            &s.n.to_string(),
            &s.n_nonconverged.to_string(),
        ])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("pvalues.csv"))?;
    w.write_record(["metric", "algo_a", "algo_b", "t", "dof", "p_value"])?;
    for r in &summary.p_values {
        let (t, dof, p) = r
            .test
            .map(|t| (fmt_f64(t.t), fmt_f64(t.dof), fmt_f64(t.p)))
            .unwrap_or_default();
        w.write_record([&r.metric, r.algo_a.name(), r.algo_b.name(), &t, &dof, &p])?;
    }
    w.flush()?;
    Ok(summary)
}

/// Writes one CSV per signal (`state_i`, `u_j`) into `out`, with columns
/// `t, <algo>_trial<iii>...`. Rows follow the longest record; missing
/// values are empty.
pub fn emit_plot_data(dir: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    let manifest = RunManifest::load(dir)?;
    let angle_dims = manifest.config.system.angle_dims();
    let mut trials = manifest.trials.clone();
    trials.sort_by_key(|t| (t.algo, t.trial));
    if trials.is_empty() {
        return Err(Error::EmptyRecord);
    }
    let records = trials
        .iter()
        .map(|t| read_record(&dir.join(&t.file), &angle_dims))
        .collect::<Result<Vec<_>>>()?;
    let names: Vec<String> = trials
        .iter()
        .map(|t| format!("{}_trial{:03}", t.algo, t.trial))
        .collect();
    let longest = records
        .iter()
        .max_by_key(|r| r.len())
        .expect("at least one record");
    let n = longest.states()[0].dim();
    let m = longest.controls().first().map_or(0, |c| c.dim());
    std::fs::create_dir_all(out)?;

    let mut written = Vec::new();
    let signals = (0..n)
        .map(|i| (format!("state_{i}"), Some(i), None))
        .chain((0..m).map(|j| (format!("u_{j}"), None, Some(j))));
    for (name, state_idx, control_idx) in signals {
        let path = out.join(format!("{name}.csv"));
        let mut w = csv::Writer::from_path(&path)?;
        let mut header = vec!["t".to_string()];
        header.extend(names.iter().cloned());
        w.write_record(&header)?;
        for (row_idx, t) in longest.times().iter().enumerate() {
            let mut row = vec![fmt_f64(*t)];
            for r in &records {
                let v = match (state_idx, control_idx) {
                    (Some(i), _) => r.states().get(row_idx).map(|s| s[i]),
                    (_, Some(j)) => r.controls().get(row_idx).map(|u| u[j]),
                    _ => None,
                };
                row.push(v.map(fmt_f64).unwrap_or_default());
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::System;

    fn tiny(dir: &Path, algos: Vec<Algorithm>) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::from_json(
            r#"{
                "system": {"kind": "double_integrator", "dt": 0.05},
                "cost": {"q": [1.0, 0.1], "r": [0.01], "q_terminal": [5.0, 0.5], "target": [1.0, 0.0]},
                "controller": {"samples": 32, "horizon": 8, "lambda": 1.0, "sigma": 1.0},
                "svgd": {"iterations": 2},
                "experiment": {"n_trials": 2, "t_total": 0.5, "record_timing": false,
                    "metrics": [{"name": "mse_x", "kind": "mse", "signal_index": 0, "target": 1.0},
                                {"name": "ts_x", "kind": "settling", "signal_index": 0, "target": 1.0, "band": 0.95}]}
            }"#,
        )
        .unwrap();
        cfg.experiment.algos = algos;
        cfg.experiment.output_dir = dir.to_path_buf();
        cfg
    }

    #[test]
    fn single_trial_run_writes_everything() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny(dir.path(), vec![Algorithm::Mppi]);
        cfg.experiment.n_trials = 1;
        cfg.experiment.t_total = 0.1;
        let manifest = run_experiment(&cfg).unwrap();
        assert!(manifest.complete);
        assert_eq!(manifest.trials.len(), 1);
        let rec = read_record(&dir.path().join(&manifest.trials[0].file), &[]).unwrap();
        assert_eq!(rec.len(), 3);
        let summary = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
        assert!(summary.starts_with("algo,metric,mean,std,median,n,n_nonconverged\n"));
        assert!(summary.contains("mppi,mse_x,"));
        assert!(dir.path().join("pvalues.csv").exists());
        assert_eq!(RunManifest::load(dir.path()).unwrap(), manifest);
    }

    #[test]
    fn paired_runs_without_refinement_match() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny(dir.path(), vec![Algorithm::Mppi, Algorithm::Soppi]);
        cfg.svgd.iterations = 0;
        run_experiment(&cfg).unwrap();
        for i in 0..2 {
            let a = std::fs::read(dir.path().join(record_file(Algorithm::Mppi, i))).unwrap();
            let b = std::fs::read(dir.path().join(record_file(Algorithm::Soppi, i))).unwrap();
            assert_eq!(a, b);
        }
        let s = summarize_dir(dir.path()).unwrap();
        assert_eq!(s.rows.len(), 4);
        assert_eq!(s.p_values.len(), 4);
        let m = s.get(Algorithm::Mppi, "mse_x").unwrap();
        assert_eq!(m, s.get(Algorithm::Soppi, "mse_x").unwrap());
        assert_eq!(s.p_value("mse_x", Algorithm::Soppi, Algorithm::Mppi), Some(0.5));
    }

    #[test]
    fn plot_data_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny(dir.path(), vec![Algorithm::Mppi]);
        let manifest = run_experiment(&cfg).unwrap();
        let out = dir.path().join("plots");
        let files = emit_plot_data(dir.path(), &out).unwrap();
        assert_eq!(files.len(), 3);
        let rec = read_record(&dir.path().join(&manifest.trials[1].file), &[]).unwrap();
        let mut r = csv::Reader::from_path(out.join("state_0.csv")).unwrap();
        assert_eq!(
            r.headers().unwrap().iter().collect::<Vec<_>>(),
            vec!["t", "mppi_trial000", "mppi_trial001"]
        );
        let rows: Vec<csv::StringRecord> = r.records().map(|x| x.unwrap()).collect();
        assert_eq!(rows.len(), rec.len());
        for (row, s) in rows.iter().zip(rec.states()) {
            assert_eq!(row[2].parse::<f64>().unwrap(), s[0]);
        }
        let u: Vec<csv::StringRecord> = csv::Reader::from_path(out.join("u_0.csv"))
            .unwrap()
            .records()
            .map(|x| x.unwrap())
            .collect();
        assert_eq!(&u.last().unwrap()[1], "");
    }

    #[test]
    fn failed_trials_leave_incomplete_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny(dir.path(), vec![Algorithm::Mppi]);
        cfg.system = System::DoubleIntegrator { dt: 0.05 };
        cfg.experiment.initial_state = Some(vec![1e300, 1e300]);
        cfg.experiment.n_trials = 1;
        assert!(run_experiment(&cfg).is_err());
        let manifest = RunManifest::load(dir.path()).unwrap();
        assert!(!manifest.complete);
        assert!(manifest.error.is_some());
    }
}
