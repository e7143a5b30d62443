//! `panelur`: panel unit-root testing, simulation and Monte Carlo experiments.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod error;
mod loader;

#[derive(Parser, Debug)]
#[command(name = "panelur", version, about = "Panel unit-root tests under factor cross-sectional dependence")]
struct Cli {
    /// Seed for commands that draw random numbers (overrides config files).
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Test a long-format panel (`unit,time,value`) for a unit root.
    Test(TestArgs),
    /// Simulate a panel from a JSON design and write it with a truth sidecar.
    Simulate {
        config: PathBuf,
        out: PathBuf,
    },
    /// Run a Monte Carlo experiment described by a JSON file.
    Mc {
        config: PathBuf,
        out: PathBuf,
        /// Emit power-figure data (raw and size-adjusted power with asymptotes).
        #[arg(long)]
        figure: bool,
    },
    /// Emit the asymptotic power envelope and the MP/BN local power curve.
    Envelope {
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        /// sqrt(omega^4 / phi^4) of the idiosyncratic long-run variances.
        #[arg(long, default_value_t = 0.8)]
        ratio: f64,
        #[arg(long, default_value_t = 10.0)]
        max: f64,
        #[arg(long, default_value_t = 0.5)]
        step: f64,
        /// Output CSV (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the invariant suites and a small oracle convergence report.
    Selftest {
        /// Seeds per size in the convergence report.
        #[arg(long, default_value_t = 40)]
        seeds: usize,
    },
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum KernelArg {
    Bartlett,
    #[value(alias = "quadratic-spectral")]
    Qs,
}

#[derive(Args, Debug)]
pub struct TestArgs {
    pub path: PathBuf,
    #[arg(long, value_enum, default_value_t = KernelArg::Bartlett)]
    pub kernel: KernelArg,
    /// andrews, newey-west or fixed=B
    #[arg(long, default_value = "andrews")]
    pub bandwidth: String,
    /// ARMA prewhitening before kernel estimation.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    pub prewhiten: bool,
    /// Largest number of factors considered by the selection criterion.
    #[arg(long, default_value_t = panelur::pipeline::DEFAULT_K_MAX)]
    pub kmax: usize,
    /// Use this number of factors instead of selecting it.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long)]
    pub json: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Test(args) => commands::test(&args),
        Command::Simulate { config, out } => commands::simulate(&config, &out, cli.seed),
        Command::Mc { config, out, figure } => commands::mc(&config, &out, figure, cli.seed),
        Command::Envelope { alpha, ratio, max, step, out } => {
            commands::envelope(alpha, ratio, max, step, out.as_deref())
        }
        Command::Selftest { seeds } => commands::selftest(seeds, cli.seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
