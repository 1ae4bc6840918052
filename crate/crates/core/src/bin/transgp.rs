use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use transgp::experiment::{run_compare, run_experiment, run_sweep, ExperimentConfig, ModelName};
use transgp::Error;

#[derive(Parser)]
#[command(name = "transgp", version, about = "Transductive GP experiments on graphs with node features")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one model over the configured seeds.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Sweep training-set sizes for several models.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated training sizes, ascending.
        #[arg(long, value_delimiter = ',')]
        sizes: Option<Vec<usize>>,
        /// Number of seeds, starting at opt.seed.
        #[arg(long)]
        seeds: Option<usize>,
        /// Comma-separated models; defaults to sweep.models.
        #[arg(long, value_delimiter = ',')]
        models: Option<Vec<String>>,
    },
    /// Run several models on identical splits.
    Compare {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "gp,graph_only,tggp")]
        models: Vec<String>,
    },
}

fn parse_models(names: &[String]) -> Result<Vec<ModelName>, Error> {
    names.iter().map(|s| s.parse()).collect()
}

fn execute(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Run { config } => {
            let cfg = ExperimentConfig::from_file(&config)?;
            let report = run_experiment(&cfg)?;
            println!(
                "{} on {}: {} = {:.6} ± {:.6} over {} seeds ({} failed)",
                report.model.as_str(),
                report.dataset,
                report.metric_name,
                report.metric,
                report.stderr,
                report.per_seed.len(),
                report.failed_seeds
            );
        }
        Command::Sweep {
            config,
            sizes,
            seeds,
            models,
        } => {
            let mut cfg = ExperimentConfig::from_file(&config)?;
            if let Some(count) = seeds {
                cfg.opt.num_seeds = count;
            }
            let sizes = sizes.unwrap_or_else(|| cfg.sweep.sizes.clone());
            let models = match models {
                Some(names) => parse_models(&names)?,
                None => cfg.sweep.models.clone(),
            };
            let table = run_sweep(&cfg, &sizes, &cfg.seeds(), &models)?;
            for s in &table.summary {
                println!(
                    "{:<10} size {:>4}: mean {:.6} ± {:.6} (log {:.4}, {} seeds)",
                    s.model.as_str(),
                    s.size,
                    s.mean,
                    s.stderr,
                    s.mean_log,
                    s.count
                );
            }
        }
        Command::Compare { config, models } => {
            let cfg = ExperimentConfig::from_file(&config)?;
            let cmp = run_compare(&cfg, &parse_models(&models)?)?;
            for r in &cmp.reports {
                println!(
                    "{:<10} {} = {:.6} ± {:.6}",
                    r.model.as_str(),
                    r.metric_name,
                    r.metric,
                    r.stderr
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
