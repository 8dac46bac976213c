use clap::{Parser, Subcommand};
use corrbound_cli::commands;
use corrbound_cli::config::load_config;
use corrbound_cli::verify;
use corrbound_cli::CliError;
use std::path::PathBuf;

/// Time-averaged autocorrelation estimators and conserved-quantity lower
/// bounds for Hamiltonian systems.
#[derive(Parser)]
#[command(name = "corrbound", version, about)]
struct Cli {
    /// Worker threads for the parallel stages (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory override.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample the Gibbs ensemble and persist it to CSV.
    Sample {
        #[arg(long)]
        config: PathBuf,
        /// Override the configured RNG seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Estimate C(A) by both estimators.
    Correlate {
        #[arg(long)]
        config: PathBuf,
        /// Reuse a previously sampled ensemble file.
        #[arg(long)]
        ensemble: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Full bound report: C(A), bound profile, saturation, partition.
    Bound {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        ensemble: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run a verification suite (oscillator | product | pendulum | all).
    Verify {
        #[arg(long)]
        suite: String,
    },
    /// Render a saved report.json as text.
    Report {
        #[arg(long)]
        report: PathBuf,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: setting thread count: {e}");
            std::process::exit(1);
        }
    }
    match run(cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Sample { config, seed } => {
            let mut cfg = load_config(&config)?;
            if let Some(dir) = cli.out {
                cfg.out_dir = dir;
            }
            let path = commands::cmd_sample(&cfg, seed)?;
            println!("wrote {}", path.display());
            Ok(())
        }
        Command::Correlate {
            config,
            ensemble,
            seed,
        } => {
            let mut cfg = load_config(&config)?;
            if let Some(dir) = cli.out {
                cfg.out_dir = dir;
            }
            let (norm, direct) = commands::cmd_correlate(&cfg, ensemble.as_deref(), seed)?;
            println!(
                "C_norm   = {:.6} +- {:.2e}  (T = {}, n = {})",
                norm.value, norm.stderr, norm.t_horizon, norm.n_ensemble
            );
            println!(
                "C_direct = {:.6} +- {:.2e}",
                direct.value, direct.stderr
            );
            println!("wrote {}", cfg.out_dir.join("correlate.csv").display());
            Ok(())
        }
        Command::Bound {
            config,
            ensemble,
            seed,
        } => {
            let mut cfg = load_config(&config)?;
            if let Some(dir) = cli.out {
                cfg.out_dir = dir;
            }
            let report = commands::cmd_bound(&cfg, ensemble.as_deref(), seed)?;
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            println!(
                "C_norm = {:.6} +- {:.2e}; bound_d = {}",
                report.c_norm.value,
                report.c_norm.stderr,
                report
                    .bounds
                    .iter()
                    .map(|b| format!("{:.4}", b.value))
                    .collect::<Vec<_>>()
                    .join(", ")
            );
            println!("wrote {}", cfg.out_dir.join("report.json").display());
            Ok(())
        }
        Command::Verify { suite } => {
            let results = verify::run_suite(&suite)?;
            print!("{}", verify::render(&results));
            let out_dir = cli.out.unwrap_or_else(|| PathBuf::from("out"));
            std::fs::create_dir_all(&out_dir)
                .map_err(|e| CliError::Runtime(format!("creating {}: {e}", out_dir.display())))?;
            let json = serde_json::to_string_pretty(&results)
                .expect("criterion results serialize");
            let path = out_dir.join(format!("verify_{suite}.json"));
            std::fs::write(&path, json).map_err(CliError::runtime)?;
            println!("wrote {}", path.display());
            let failed = results.iter().filter(|r| !r.passed).count();
            if failed > 0 {
                return Err(CliError::VerificationFailed {
                    failed,
                    total: results.len(),
                });
            }
            Ok(())
        }
        Command::Report { report } => {
            let text = commands::cmd_report(&report)?;
            print!("{text}");
            Ok(())
        }
    }
}
