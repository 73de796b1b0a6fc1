mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

/// Cluster synchronization laboratory: audit, design, simulate and sweep
/// leader-following networks of linear agents on fast-switching digraphs.
#[derive(Debug, Parser)]
#[command(name = "clustersync", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Audit a scenario and print the condition report.
    Analyze {
        scenario: PathBuf,
        /// Override the switching time-scale ratio.
        #[arg(long)]
        epsilon: Option<f64>,
        /// Print `key=value` lines instead of the text report.
        #[arg(long)]
        machine: bool,
        /// Also search for an empirical epsilon bound by simulation.
        #[arg(long)]
        guidance: bool,
    },
    /// Synthesize P, K, the network scaling and coupling thresholds.
    SynthesizeGains {
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate a scenario and write the error (and state) trajectory as CSV.
    Simulate {
        scenario: PathBuf,
        /// Gains file from `synthesize-gains`; designed on the fly when absent.
        #[arg(long)]
        gains: Option<PathBuf>,
        /// Output CSV; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        full_state: bool,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epsilon: Option<f64>,
    },
    /// Run one simulation per grid value and summarize the outcomes.
    Sweep {
        scenario: PathBuf,
        #[arg(long, value_enum)]
        param: SweepParam,
        /// Comma-separated grid values.
        #[arg(long, value_delimiter = ',', required = true)]
        grid: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Materialize and run one of the built-in example scenarios.
    ReproExample {
        #[arg(value_enum)]
        name: ReproName,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        full_state: bool,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SweepParam {
    Epsilon,
    C,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ReproName {
    Fig2,
    Fig3,
    Fig4,
    Fig5,
    Fig6,
}

impl ReproName {
    fn key(self) -> &'static str {
        match self {
            ReproName::Fig2 => "fig2",
            ReproName::Fig3 => "fig3",
            ReproName::Fig4 => "fig4",
            ReproName::Fig5 => "fig5",
            ReproName::Fig6 => "fig6",
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("CLUSTERSYNC_LOG", "warn")).init();
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Analyze {
            scenario,
            epsilon,
            machine,
            guidance,
        } => commands::analyze(&scenario, epsilon, machine, guidance),
        Command::SynthesizeGains { scenario, out } => commands::synthesize(&scenario, &out),
        Command::Simulate {
            scenario,
            gains,
            out,
            full_state,
            seed,
            epsilon,
        } => commands::simulate(&scenario, gains.as_deref(), out.as_deref(), full_state, seed, epsilon),
        Command::Sweep {
            scenario,
            param,
            grid,
            out,
            seed,
        } => commands::sweep(&scenario, param, &grid, out.as_deref(), seed),
        Command::ReproExample { name, out, full_state } => commands::repro(name.key(), &out, full_state),
    };
    ExitCode::from(code)
}
