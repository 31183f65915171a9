use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use diffbridge::Mode;
use diffbridge_cli::{run, CliError, Command, ExperimentConfig, Overrides};

#[derive(Debug, Parser)]
#[command(name = "diffbridge", version, about = "Diffusion-bridge likelihood experiments on landmark shapes")]
struct Args {
    command: Command,
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; created if missing.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Caps worker threads.
    #[arg(long)]
    threads: Option<usize>,
    /// `full_gaussian` or `variance_profile`; overrides the config.
    #[arg(long)]
    mode: Option<Mode>,
}

fn execute(args: &Args) -> Result<(), CliError> {
    if let Some(n) = args.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    let mut config = ExperimentConfig::load(&args.config)?;
    Overrides { seed: args.seed, mode: args.mode }.apply(&mut config);
    run(args.command, &config, &args.out)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = Args::parse();
    match execute(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::FAILURE
        }
    }
}
