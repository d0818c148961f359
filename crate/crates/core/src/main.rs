use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use soppi::harness::{emit_plot_data, run_experiment, summarize_dir, ExperimentConfig, Summary};
use soppi::Algorithm;

#[derive(Parser)]
#[command(version, about = "MPPI / SOPPI experiment runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a paired-seed battery described by a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Restrict the run to one algorithm.
        #[arg(long)]
        algo: Option<Algorithm>,
        #[arg(long)]
        trials: Option<usize>,
        /// Base seed; trial i uses seed + i.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recompute metrics, summary and p-values for a run directory.
    Summarize {
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Export per-signal time series for plotting.
    Plotdata {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn print_summary(s: &Summary) {
    println!(
        "{:<6} {:<14} {:>14} {:>14} {:>14} {:>3} {:>5}",
        "algo", "metric", "mean", "std", "median", "n", "nonc"
    );
    for r in &s.rows {
        let m = &r.summary;
        println!(
            "{:<6} {:<14} {:>14.6} {:>14.6} {:>14.6} {:>3} {:>5}",
            r.algo.name(),
            r.metric,
            m.mean,
            m.std,
            m.median,
            m.n,
            m.n_nonconverged
        );
    }
    println!();
    println!("{:<14} {:<6} {:<6} {:>10}", "metric", "a", "b", "p(a<b)");
    for r in &s.p_values {
        let p = r.test.map_or("-".to_string(), |t| format!("{:.6}", t.p));
        println!("{:<14} {:<6} {:<6} {:>10}", r.metric, r.algo_a.name(), r.algo_b.name(), p);
    }
}

fn run(cli: Cli) -> soppi::Result<()> {
    match cli.command {
        Command::Run {
            config,
            algo,
            trials,
            seed,
            out,
        } => {
            let mut cfg = ExperimentConfig::from_path(&config)?;
            if let Some(a) = algo {
                cfg.experiment.algos = vec![a];
            }
            if let Some(n) = trials {
                cfg.experiment.n_trials = n;
            }
            if let Some(s) = seed {
                cfg.experiment.base_seed = s;
            }
            if let Some(o) = out {
                cfg.experiment.output_dir = o;
            }
            let manifest = run_experiment(&cfg)?;
            println!(
                "{} trials written to {}",
                manifest.trials.len(),
                cfg.experiment.output_dir.display()
            );
            print_summary(&summarize_dir(&cfg.experiment.output_dir)?);
        }
        Command::Summarize { input } => print_summary(&summarize_dir(&input)?),
        Command::Plotdata { input, out } => {
            for f in emit_plot_data(&input, &out)? {
                println!("{}", f.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
