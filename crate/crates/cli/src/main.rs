use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use metalearn_cli::{commands, CliError, RunArgs};

/// Meta-learning experiment runner: sine regression, synthetic few-shot
/// classification, gradient-combination and batch-overlap sweeps,
/// Taylor-expansion checks, and the solution-manifold demo.
#[derive(Parser)]
#[command(name = "metalearn", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Path to the key=value config file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory for the run artifact.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Use the full-scale iteration counts instead of desk-scale defaults.
    #[arg(long)]
    paper_scale: bool,
    /// Also render static SVG charts from the emitted CSVs.
    #[arg(long)]
    svg: bool,
}

impl CommonArgs {
    fn into_run_args(self) -> RunArgs {
        RunArgs {
            config: self.config,
            out: self.out,
            seed: self.seed,
            paper_scale: self.paper_scale,
            svg: self.svg,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Sine-wave regression demo (Reptile, MAML, random-init control).
    SineDemo(CommonArgs),
    /// Few-shot classification on the synthetic episode family.
    Fewshot(CommonArgs),
    /// Inner-gradient combination sweep (g1..g4, sums and averages).
    ComboSweep(CommonArgs),
    /// Batch-overlap sensitivity sweep for first-order MAML vs Reptile.
    OverlapSweep(CommonArgs),
    /// Taylor-expansion residual checks with pass/fail verdicts.
    TaylorCheck(CommonArgs),
    /// Solution-manifold iteration vs the closed-form fixed point.
    ManifoldDemo(CommonArgs),
}

fn dispatch(command: Command) -> Result<(), CliError> {
    let (runner, args): (fn(&RunArgs) -> _, CommonArgs) = match command {
        Command::SineDemo(a) => (commands::sine::run, a),
        Command::Fewshot(a) => (commands::fewshot::run, a),
        Command::ComboSweep(a) => (commands::combo::run, a),
        Command::OverlapSweep(a) => (commands::overlap::run, a),
        Command::TaylorCheck(a) => (commands::taylor::run, a),
        Command::ManifoldDemo(a) => (commands::manifold::run, a),
    };
    let run_args = args.into_run_args();
    runner(&run_args).map(|artifact| {
        println!("wrote run artifact to {}", artifact.out_dir.display());
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
