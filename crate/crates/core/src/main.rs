use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use levy_cox::cli;
use levy_cox::config::{RawConfig, RunConfig};

/// Bayesian nonparametric hazard estimation with Lévy–Cox moving-average
/// priors.
#[derive(Parser)]
#[command(name = "levy-cox", version)]
struct Opts {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `workers`.
    #[arg(long)]
    workers: Option<usize>,
    /// Overrides `replicates`.
    #[arg(long)]
    replicates: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Posterior mean hazard by Monte Carlo.
    Fit {
        #[command(flatten)]
        common: Common,
        /// CSV with columns time,event.
        #[arg(long)]
        data: PathBuf,
    },
    /// Exact partition posterior and hazard by enumeration (small n).
    Oracle {
        #[command(flatten)]
        common: Common,
        #[arg(long, required_unless_present = "esf_theta")]
        data: Option<PathBuf>,
        /// Instead of fitting, tabulate Ewens partition probabilities from
        /// gamma-process cumulants with this total mass.
        #[arg(long)]
        esf_theta: Option<f64>,
        /// Sample size for the Ewens table.
        #[arg(long, default_value_t = 3)]
        esf_n: usize,
    },
    /// Prior predictive hazard and survival on the output grid.
    PriorPredictive {
        #[command(flatten)]
        common: Common,
    },
    /// Cumulant checks and the Poisson calculus Monte Carlo harness.
    Validate {
        #[command(flatten)]
        common: Common,
    },
}

fn load(common: &Common) -> levy_cox::Result<RunConfig> {
    let mut raw = RawConfig::load(&common.config)?;
    if common.seed.is_some() {
        raw.seed = common.seed;
    }
    if common.workers.is_some() {
        raw.workers = common.workers;
    }
    if common.replicates.is_some() {
        raw.replicates = common.replicates;
    }
    RunConfig::from_raw(&raw)
}

fn run(cmd: Command) -> levy_cox::Result<bool> {
    match cmd {
        Command::Fit { common, data } => {
            let cfg = load(&common)?;
            let out = cli::fit(&cfg, &data, &common.out)?;
            println!("wrote {} and {}", out.hazard_csv.display(), out.diagnostics_json.display());
        }
        Command::Oracle {
            common,
            data,
            esf_theta,
            esf_n,
        } => {
            let cfg = load(&common)?;
            if let Some(theta) = esf_theta {
                for r in cli::oracle_esf(&cfg, theta, esf_n, &common.out)? {
                    println!(
                        "{:<24} ewens {:.12}  gamma process {:.12}",
                        serde_json::to_string(&r.partition)?,
                        r.closed_form,
                        r.gamma_process
                    );
                }
            } else {
                let data = data.as_deref().unwrap_or(Path::new(""));
                let post = cli::oracle(&cfg, data, &common.out)?;
                println!("{} partitions; wrote {}", post.entries.len(), common.out.display());
            }
        }
        Command::PriorPredictive { common } => {
            let cfg = load(&common)?;
            let rows = cli::prior_predictive_curve(&cfg, &common.out)?;
            println!("{} rows; wrote {}", rows.len(), common.out.join("prior_predictive.csv").display());
        }
        Command::Validate { common } => {
            let cfg = load(&common)?;
            let checks = cli::validate(&cfg, &common.out)?;
            for c in &checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            return Ok(checks.iter().all(|c| c.passed));
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let opts = Opts::parse();
    match run(opts.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
