use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use asp_rl::agents::Algorithm;
use asp_rl::assembly::AssemblySpec;
use asp_rl::env::DurationMode;
use asp_rl::harness::{compare, run_enumeration, run_experiment, ExperimentConfig};
use asp_rl::oracle::{count_linear_extensions, DEFAULT_CEILING};
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "asp-rl", version, about = "Assembly sequence planning with reinforcement learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum PickupConvention {
    Both,
    On,
    Off,
}

#[derive(Clone, Copy, ValueEnum)]
enum Setting {
    Deterministic,
    Stochastic,
}

#[derive(Subcommand)]
enum Command {
    /// Enumerate every feasible sequence and report duration statistics.
    Enumerate {
        #[arg(long)]
        spec: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "both")]
        pickup_convention: PickupConvention,
        #[arg(long, default_value_t = 1.0)]
        bin_width: f64,
        #[arg(long, default_value_t = DEFAULT_CEILING)]
        ceiling: u64,
    },
    /// Run a multi-seed training experiment.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        algo: Option<Algorithm>,
        #[arg(long, value_enum)]
        setting: Option<Setting>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Merge the summaries of several runs into one table.
    Compare {
        #[arg(long, num_args = 1.., required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check a spec file for structural errors.
    Validate {
        #[arg(long)]
        spec: String,
    },
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |x| format!("{x:.3}"))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Enumerate {
            spec,
            out,
            pickup_convention,
            bin_width,
            ceiling,
        } => {
            let spec = AssemblySpec::from_source(&spec)?;
            let conventions: &[bool] = match pickup_convention {
                PickupConvention::Both => &[true, false],
                PickupConvention::On => &[true],
                PickupConvention::Off => &[false],
            };
            let start = Instant::now();
            let stats = run_enumeration(&spec, conventions, bin_width, ceiling, Some(&out))?;
            println!(
                "{} sequences in {:.3} s",
                stats.count,
                start.elapsed().as_secs_f64()
            );
            for c in &stats.report.conventions {
                println!(
                    "pickup_costs_change={}: min {} max {} mean {:.3}, {} optimal",
                    c.pickup_costs_change,
                    c.stats.min,
                    c.stats.max,
                    c.stats.mean,
                    c.optimal_count
                );
            }
            println!("{}", stats.report.discrepancy);
        }
        Command::Train {
            config,
            out,
            algo,
            setting,
            trials,
            episodes,
            seed,
            workers,
        } => {
            let mut cfg = ExperimentConfig::load(&config)
                .with_context(|| format!("loading {}", config.display()))?;
            if let Some(a) = algo {
                cfg.agent.algorithm = a;
            }
            if let Some(s) = setting {
                cfg.env.mode = match s {
                    Setting::Deterministic => DurationMode::Deterministic,
                    Setting::Stochastic => DurationMode::Stochastic,
                };
            }
            cfg.trials = trials.unwrap_or(cfg.trials);
            cfg.episodes = episodes.unwrap_or(cfg.episodes);
            cfg.base_seed = seed.unwrap_or(cfg.base_seed);
            cfg.workers = workers.or(cfg.workers);
            cfg.output_dir = Some(out.clone());
            let outcome = run_experiment(&cfg)?;
            let a = &outcome.aggregate;
            println!(
                "{}: final {} ± {} t.u. over {} trials, unwanted {:.1} ± {:.1}; results in {}",
                a.algorithm,
                fmt_opt(a.final_mean_tu),
                fmt_opt(a.final_std_tu),
                a.trials_with_final,
                a.total_unwanted_mean,
                a.total_unwanted_std,
                out.display()
            );
        }
        Command::Compare { runs, out } => {
            let rows = compare(&runs, &out)?;
            println!(
                "{:<20} {:<10} {:<14} {:>10} {:>8} {:>10}",
                "run", "algorithm", "setting", "final_tu", "std", "unwanted"
            );
            for r in &rows {
                println!(
                    "{:<20} {:<10} {:<14} {:>10} {:>8} {:>10.1}",
                    r.run,
                    r.algorithm.to_string(),
                    format!("{:?}", r.setting).to_lowercase(),
                    fmt_opt(r.final_mean_tu),
                    fmt_opt(r.final_std_tu),
                    r.total_unwanted_mean
                );
            }
        }
        Command::Validate { spec } => {
            let parsed = AssemblySpec::from_source(&spec)?;
            let orders = count_linear_extensions(&parsed)
                .map_or_else(|| "too many tasks to count".into(), |n| n.to_string());
            println!(
                "{spec}: valid, {} tasks, {} tools, {orders} feasible sequences",
                parsed.num_tasks(),
                parsed.num_tools()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
