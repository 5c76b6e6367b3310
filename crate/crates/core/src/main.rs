use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use bst_core::harness::{
    run_ablate, run_analyze_morse, run_evaluate, run_gen_data, run_train_agent, run_train_morse, Baseline,
    HarnessError, RunConfig, RunManifest,
};

/// Offline RL with a Morse-network behavioral supervisor.
#[derive(Parser)]
#[command(name = "bst", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum BaselineArg {
    Bc,
    WeightedBc,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the offline dataset.
    GenData(Common),
    /// Fit a Morse model to the dataset.
    TrainMorse(Common),
    /// Train the actor-critic agent, or a cloning baseline.
    TrainAgent {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        baseline: Option<BaselineArg>,
    },
    /// Evaluate a saved agent checkpoint.
    Evaluate(Common),
    /// Certainty of a Morse model on dataset, permuted and uniform actions.
    AnalyzeMorse(Common),
    /// Run the configured ablation sweep.
    Ablate(Common),
}

fn load_config(path: Option<&Path>) -> Result<RunConfig, HarnessError> {
    let cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn run(cmd: Command) -> Result<RunManifest, HarnessError> {
    let (common, baseline) = match &cmd {
        Command::TrainAgent { common, baseline } => (common, *baseline),
        Command::GenData(c) | Command::TrainMorse(c) | Command::Evaluate(c) | Command::AnalyzeMorse(c) | Command::Ablate(c) => {
            (c, None)
        }
    };
    let cfg = load_config(common.config.as_deref())?;
    let (seed, out) = (common.seed, common.out.as_path());
    match cmd {
        Command::GenData(_) => run_gen_data(&cfg, seed, out),
        Command::TrainMorse(_) => run_train_morse(&cfg, seed, out),
        Command::TrainAgent { .. } => {
            let baseline = baseline.map(|b| match b {
                BaselineArg::Bc => Baseline::Bc,
                BaselineArg::WeightedBc => Baseline::WeightedBc,
            });
            run_train_agent(&cfg, seed, out, baseline)
        }
        Command::Evaluate(_) => run_evaluate(&cfg, seed, out),
        Command::AnalyzeMorse(_) => run_analyze_morse(&cfg, seed, out),
        Command::Ablate(_) => run_ablate(&cfg, seed, out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // usage mistakes count as configuration errors
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(manifest) => {
            for w in &manifest.warnings {
                eprintln!("warning: {w}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
