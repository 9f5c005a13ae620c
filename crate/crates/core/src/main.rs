use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use promptsel::environments::validate_replay;
use promptsel::policies::suprff_feature_budget;
use promptsel::runner::{run_experiment, ExperimentConfig};

#[derive(Parser)]
#[command(
    name = "promptsel",
    version,
    about = "Prompt-aware generator selection with kernelized UCB bandits"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a TOML file.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        horizon: Option<usize>,
    },
    /// Check a replay log and print a JSON report.
    Validate {
        #[arg(long)]
        replay: PathBuf,
    },
    /// Print the feature-count lower bound of the staged RFF variant.
    Budget {
        #[arg(long)]
        epsilon: f64,
        #[arg(long = "delta-rff")]
        delta_rff: f64,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        alpha: f64,
        #[arg(long)]
        delta: f64,
        #[arg(long)]
        dim: usize,
        #[arg(long)]
        sigma: f64,
    },
}

fn run(cli: Cli) -> promptsel::Result<bool> {
    match cli.command {
        Command::Run {
            config,
            out,
            trials,
            seed,
            horizon,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(out) = out {
                cfg.output_dir = out;
            }
            if let Some(t) = trials {
                cfg.trials = t;
            }
            if let Some(s) = seed {
                cfg.base_seed = s;
            }
            if let Some(h) = horizon {
                cfg.horizon = h;
            }
            let report = run_experiment(&cfg)?;
            let mut ok = true;
            for p in &report.policies {
                match &p.result {
                    Ok(run) => println!(
                        "{:<24} regret {:>10} otb {:>8} opr {:.3} ({:.1}s)",
                        p.label,
                        fmt_opt(run.aggregate.regret.as_ref().and_then(|c| c.last_mean())),
                        fmt_opt(run.aggregate.otb.as_ref().and_then(|c| c.last_mean())),
                        run.aggregate.opr.last_mean().unwrap_or(0.0),
                        run.total_seconds
                    ),
                    Err(e) => {
                        ok = false;
                        eprintln!("{:<24} failed: {e}", p.label);
                    }
                }
            }
            println!("results written to {}", report.output_dir.display());
            Ok(ok)
        }
        Command::Validate { replay } => {
            let report = validate_replay(&replay)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&report).expect("report serializes")
            );
            Ok(report.is_valid())
        }
        Command::Budget {
            epsilon,
            delta_rff,
            n,
            alpha,
            delta,
            dim,
            sigma,
        } => {
            let b = suprff_feature_budget(epsilon, delta_rff, n, alpha, delta, dim, sigma)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&b).expect("budget serializes")
            );
            Ok(true)
        }
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.3}")).unwrap_or_else(|| "n/a".into())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
