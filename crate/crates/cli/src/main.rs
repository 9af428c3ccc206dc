use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use massopt::optimizer::Direction;
use massopt::solver::AdvectionScheme;
use massopt_cli::commands::{cmd_enhance, cmd_optimize, cmd_simulate, cmd_verify, RunOptions};
use massopt_cli::verify::Level;

#[derive(Parser)]
#[command(name = "massopt", version, about = "Terminal-mass optimization for reaction-advection-diffusion scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum DirectionArg {
    Max,
    Min,
}

#[derive(Clone, Copy, ValueEnum)]
enum LevelArg {
    Quick,
    Full,
}

#[derive(Clone, Copy, ValueEnum)]
enum Fault {
    DownwindAdvection,
}

#[derive(clap::Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides [output].dir.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Optimizer seed; overrides [optimizer].seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, hide = true)]
    inject_fault: Option<Fault>,
}

impl Common {
    fn options(&self) -> RunOptions {
        RunOptions {
            out: self.out.clone(),
            seed: self.seed,
            scheme: scheme(self.inject_fault),
        }
    }
}

fn scheme(fault: Option<Fault>) -> AdvectionScheme {
    match fault {
        Some(Fault::DownwindAdvection) => AdvectionScheme::DownwindFault,
        None => AdvectionScheme::Upwind,
    }
}

#[derive(Subcommand)]
enum Command {
    /// Integrate one scenario and write trajectory, budget and final state CSVs.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Initial datum CSV with a `u0` column; defaults to the uniform datum.
        #[arg(long)]
        u0: Option<PathBuf>,
    },
    /// Multistart projected-gradient optimization of the terminal mass.
    Optimize {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "max")]
        direction: DirectionArg,
    },
    /// Compare the advected infimum estimate with the unadvected maximum.
    Enhance {
        #[command(flatten)]
        common: Common,
    },
    /// Run the invariant checks and print a pass/fail table.
    Verify {
        #[arg(long, value_enum, default_value = "quick")]
        level: LevelArg,
        #[arg(long, hide = true)]
        inject_fault: Option<Fault>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate { common, u0 } => cmd_simulate(&common.config, u0.as_deref(), &common.options()),
        Command::Optimize { common, direction } => {
            let d = match direction {
                DirectionArg::Max => Direction::Max,
                DirectionArg::Min => Direction::Min,
            };
            cmd_optimize(&common.config, d, &common.options())
        }
        Command::Enhance { common } => cmd_enhance(&common.config, &common.options()),
        Command::Verify { level, inject_fault } => {
            let l = match level {
                LevelArg::Quick => Level::Quick,
                LevelArg::Full => Level::Full,
            };
            cmd_verify(l, scheme(*inject_fault))
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("massopt: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
