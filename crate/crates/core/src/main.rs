use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fpf_gain::bench::{self, ExperimentConfig};
use fpf_gain::Error;
use log::info;

#[derive(Parser)]
#[command(name = "fpf-gain", version, about = "Kernel gain approximation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Per-particle gain curves for every ε, against the exact and constant gains.
    GainCurve(Common),
    /// Error of every method over the ε and dimension grids.
    ErrorSweep(Common),
    /// Power-law exponent of the error on the variance-dominated end.
    FitExponent(Common),
    /// Empirical bias on a scalar Gaussian next to the closed forms.
    BiasCurve(Common),
    /// Filtering runs comparing gain modes.
    FpfDemo(Common),
}

#[derive(Args)]
struct Common {
    /// TOML experiment configuration; omitted keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Master seed, overriding the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 0 uses all cores.
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if self.threads > 0 {
            rayon::ThreadPoolBuilder::new()
                .num_threads(self.threads)
                .build_global()
                .map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::GainCurve(c) => {
            let s = bench::run_gain_curve(&c.load()?, &c.out)?;
            for k in &s.curves {
                info!("d = {} ε = {:e} {}: rms to constant {:e}", k.d, k.epsilon, k.method, k.rms_to_constant);
            }
        }
        Command::ErrorSweep(c) => {
            let s = bench::run_error_sweep(&c.load()?, &c.out)?;
            info!("{} records, {} cells, {} failures", s.records.len(), s.cells.len(), s.failures.len());
        }
        Command::FitExponent(c) => {
            let s = bench::run_fit_exponent(&c.load()?, &c.out)?;
            for f in &s.fits {
                println!("d = {} {}: alpha = {:.4} over [{:e}, {:e}] ({} points)", f.d, f.method, f.alpha, f.min_epsilon, f.max_epsilon, f.points);
            }
        }
        Command::BiasCurve(c) => {
            let s = bench::run_bias_curve(&c.load()?, &c.out)?;
            info!("{} bias points", s.points.len());
        }
        Command::FpfDemo(c) => {
            let s = bench::run_fpf_demo(&c.load()?, &c.out)?;
            for m in &s.modes {
                println!("{}: mean square error {:.6e} ± {:.1e}", m.mode, m.mean_mse, m.mse_std_error);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        _ if e.is_numerical() => 3,
        Error::Io(_) | Error::Csv(_) | Error::Json(_) => 1,
        _ => 2,
    }
}
