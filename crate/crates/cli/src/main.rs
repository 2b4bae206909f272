use std::path::PathBuf;
use std::process::ExitCode;

use abrnet::eval::EvalHead;
use abrnet_cli::commands;
use abrnet_cli::{CliError, ExperimentConfig, Overrides};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "abrnet", version, about = "Domain-adaptive regression experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(short, long)]
    config: PathBuf,
    /// Overrides the training seed list with a single seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig, CliError> {
        let overrides = Overrides {
            seed: self.seed,
            output_dir: self.output_dir.clone(),
        };
        ExperimentConfig::load(&self.config, &overrides)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the source and target datasets.
    GenData(Common),
    /// Train the first configured method with the first seed.
    Train(Common),
    /// Evaluate a checkpoint on a dataset file.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = EvalHead::Mean)]
        head: EvalHead,
        #[arg(long, default_value_t = abrnet::eval::DEFAULT_CELL_SIZE)]
        cell_size: f64,
        #[arg(long)]
        output_dir: PathBuf,
    },
    /// Train every configured method for every seed and tabulate the results.
    Compare(Common),
    /// Retrain over a list of mixing ratios.
    Sweep(Common),
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenData(c) => {
            let data = commands::cmd_gen_data(&c.load()?)?;
            println!("{}", data.manifest_path.display());
        }
        Command::Train(c) => {
            let dir = commands::cmd_train(&c.load()?)?;
            println!("{}", dir.display());
        }
        Command::Eval {
            checkpoint,
            dataset,
            head,
            cell_size,
            output_dir,
        } => {
            if !(cell_size > 0.0) {
                return Err(CliError::Schema("--cell-size: must be positive".into()));
            }
            let m = commands::cmd_eval(&checkpoint, &dataset, head, cell_size, &output_dir)?;
            println!("mse {} mae {}", m.mse, m.mae);
        }
        Command::Compare(c) => {
            let rows = commands::cmd_compare(&c.load()?)?;
            print!("{}", commands::compare_text(&rows));
        }
        Command::Sweep(c) => {
            let dir = commands::cmd_sweep(&c.load()?)?;
            println!("{}", dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
