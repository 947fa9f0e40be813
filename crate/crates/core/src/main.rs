use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use byzsim::config::{RunConfig, SweepSpec};
use byzsim::error::Error;
use byzsim::harness::{
    self, connectivity_study, connectivity_with_detection, dump_datasets, run_pipeline,
    write_outputs, RemovalModel,
};

/// Simulator for Byzantine-robust decentralized stochastic optimization
/// with statistical neighbor screening.
#[derive(Parser)]
#[command(name = "byzsim", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML run configuration; omitted means the built-in desk-scale defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the configured master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Scale the configuration up to the full experiment sizes
    /// (m = 150, K = 3000).
    #[arg(long, default_value_t = false)]
    paper_scale: bool,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
                RunConfig::parse(&text)?
            }
            None => RunConfig::desk_default(),
        };
        if self.paper_scale {
            cfg = cfg.paper_scale();
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline once and write all artifacts.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
        /// Output directory (default `out/`).
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Also dump every node's dataset as CSV.
        #[arg(long, default_value_t = false)]
        dump_data: bool,
    },
    /// Repeat the pipeline over one swept axis and write a long-format CSV.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        /// Axis to vary: s_r, rho, alpha, or k.
        #[arg(long)]
        axis: String,
        /// Comma-separated list of axis values.
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
        /// Replications per value.
        #[arg(long, default_value_t = 5)]
        reps: usize,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Monte Carlo estimate of the probability that the normal nodes stay a
    /// closed strongly connected component after pruning.
    Connectivity {
        #[arg(long, default_value_t = 50)]
        m: usize,
        #[arg(long, default_value_t = 0.5)]
        p: f64,
        #[arg(long, default_value_t = 0.2)]
        rho: f64,
        /// Removal model: none, drop-all, exact, or detect (runs the real
        /// screening pipeline per trial).
        #[arg(long, default_value = "exact")]
        model: String,
        #[arg(long, default_value_t = 200)]
        trials: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Configuration for the `detect` model (defaults to desk scale).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Optional CSV output path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error [{}]: {e}", e.phase());
            if e.is_config() {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Run { config, out, dump_data } => {
            let cfg = config.load()?;
            let outcome = run_pipeline(&cfg)?;
            write_outputs(&outcome, &out)?;
            if dump_data {
                let prep = harness::prepare(&cfg)?;
                dump_datasets(&prep.datasets, &out.join("data"))?;
            }
            println!(
                "run complete: scc size {}, averaged FDP {:.4}, averaged Pa {:.4}, final gap {:.6e}",
                outcome.scc.len(),
                outcome.report.averaged_fdp,
                outcome.report.averaged_pa,
                outcome.final_gap()
            );
            println!("artifacts in {}", out.display());
            Ok(())
        }
        Command::Sweep { config, axis, values, reps, out } => {
            let cfg = config.load()?;
            let spec = SweepSpec {
                axis: axis.parse()?,
                values,
                replications: reps,
            };
            let outcome = harness::sweep(&cfg, &spec)?;
            byzsim::csvio::write_file(&out.join("sweep.csv"), &harness::sweep_csv(&outcome))?;
            println!("sweep complete: {} rows in {}", outcome.rows.len(), out.join("sweep.csv").display());
            if !outcome.failures.is_empty() {
                for (value, rep, msg) in &outcome.failures {
                    eprintln!("failed cell value={value} rep={rep}: {msg}");
                }
                return Err(Error::Optimization(format!(
                    "{} sweep cell(s) failed; completed rows were preserved",
                    outcome.failures.len()
                )));
            }
            Ok(())
        }
        Command::Connectivity { m, p, rho, model, trials, seed, config, out } => {
            let report = if model == "detect" {
                let mut cfg = match config {
                    Some(path) => {
                        let text = std::fs::read_to_string(&path).map_err(|e| {
                            Error::Config(format!("cannot read {}: {e}", path.display()))
                        })?;
                        RunConfig::parse(&text)?
                    }
                    None => RunConfig::desk_default(),
                };
                cfg.topology.m = m;
                cfg.topology.p = p;
                cfg.byzantine.rho = rho;
                cfg.seed = seed;
                cfg.validate()?;
                connectivity_with_detection(&cfg, trials)?
            } else {
                let removal: RemovalModel = model.parse()?;
                connectivity_study(m, p, rho, removal, trials, seed)?
            };
            println!(
                "connectivity: {}/{} trials kept the normal component closed (p̂ = {:.4})",
                report.successes, report.trials, report.probability
            );
            println!(
                "analytic constants: c(m,p) = {:.3}, c(m,p,δ=0.1) = {:.3}",
                report.c_mp, report.c_mp_delta
            );
            if let Some(path) = out {
                byzsim::csvio::write_file(&path, &harness::connectivity_csv(&report))?;
            }
            Ok(())
        }
    }
}
