use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use homotopy_core::cli;
use homotopy_core::Registry;

#[derive(Parser)]
#[command(
    name = "homotopy",
    version,
    about = "Homotopy continuation along the Davidenko flow"
)]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one registered problem, or all of them.
    Run {
        #[arg(long, required_unless_present = "all", conflicts_with = "all")]
        problem: Option<String>,
        /// Run every registered problem in parallel.
        #[arg(long)]
        all: bool,
        /// JSON solver configuration; absent fields take defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, conflicts_with = "all")]
        trace: Option<PathBuf>,
        #[arg(long, conflicts_with = "all")]
        summary: Option<PathBuf>,
        /// Output directory for `--all`.
        #[arg(long, requires = "all")]
        out_dir: Option<PathBuf>,
    },
    /// List registered problems.
    List,
    /// Report on the hypotheses of a registered problem.
    Check {
        #[arg(long)]
        problem: String,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let args = Args::parse();
    let registry = Registry::builtin();
    let mut out = io::stdout().lock();
    let mut err = io::stderr().lock();
    let code = match args.command {
        Command::Run {
            problem,
            all,
            config,
            trace,
            summary,
            out_dir,
        } => {
            if all {
                let dir = out_dir.unwrap_or_else(cli::default_out_dir);
                cli::run_all(&registry, config.as_deref(), &dir, &mut out, &mut err)
            } else {
                let name = problem.expect("clap enforces --problem");
                cli::run_problem(
                    &registry,
                    &name,
                    config.as_deref(),
                    trace.as_deref(),
                    summary.as_deref(),
                    &mut out,
                    &mut err,
                )
            }
        }
        Command::List => {
            print!("{}", cli::list_problems(&registry));
            cli::EXIT_OK
        }
        Command::Check { problem, config } => {
            cli::check_problem(&registry, &problem, config.as_deref(), &mut out, &mut err)
        }
    };
    ExitCode::from(code as u8)
}
