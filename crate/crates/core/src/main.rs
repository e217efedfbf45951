use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use porosgp::app::{self, Overrides};
use porosgp::config::RunConfig;

#[derive(Parser)]
#[command(
    name = "porosgp",
    version,
    about = "Two-scale poroelastic material optimization"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the material catalogue (offline phase).
    Homogenize(Common),
    /// Run one optimization.
    Optimize(Common),
    /// Sweep the flux weight from a common cold start.
    Pareto(Common),
    /// Run the gradient, model and subsolver verification suite.
    Check(Common),
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Write fields every k accepted iterations.
    #[arg(long = "dump-every")]
    dump_every: Option<usize>,
}

impl Common {
    fn load(&self) -> porosgp::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        Overrides {
            out: self.out.clone(),
            seed: self.seed,
            dump_every: self.dump_every,
        }
        .apply(&mut cfg);
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> porosgp::Result<bool> {
    let common = match &cli.command {
        Command::Homogenize(c) | Command::Optimize(c) | Command::Pareto(c) | Command::Check(c) => c,
    };
    if let Some(n) = common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| porosgp::Error::Config(format!("thread pool: {e}")))?;
    }
    let cfg = common.load()?;
    match cli.command {
        Command::Homogenize(_) => {
            let path = app::cmd_homogenize(&cfg)?;
            println!("catalogue written to {}", path.display());
            Ok(true)
        }
        Command::Optimize(_) => {
            let s = app::cmd_optimize(&cfg)?;
            println!(
                "Phi = {:.6e}  Psi = {:.6e}  J = {:.6e}  iterations = {}  stop = {:?}",
                s.compliance, s.flux, s.merit, s.iterations, s.stop
            );
            Ok(true)
        }
        Command::Pareto(_) => {
            let pts = app::cmd_pareto(&cfg)?;
            for p in &pts {
                match &p.error {
                    None => println!(
                        "lambda_psi = {:>8}  Phi = {:.6e}  Psi = {:.6e}  iterations = {}",
                        p.lambda_psi, p.compliance, p.flux, p.iterations
                    ),
                    Some(e) => println!("lambda_psi = {:>8}  failed: {e}", p.lambda_psi),
                }
            }
            Ok(pts.iter().all(|p| p.error.is_none()))
        }
        Command::Check(_) => {
            let report = app::cmd_check(&cfg)?;
            for c in &report {
                println!(
                    "{} {:<58} measured {:.3e}  tolerance {:.1e}  ({:.2} s)",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.measured,
                    c.tolerance,
                    c.seconds
                );
            }
            Ok(report.iter().all(|c| c.passed))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("POROSGP_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            ExitCode::FAILURE
        }
    }
}
