use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fbkubo_cli::commands::{self, Command};
use fbkubo_cli::config::RunConfig;
use fbkubo_cli::error::CliError;
use fbkubo_cli::{output, THREADS_ENV};

/// Transport in diluted flat-band chains.
///
/// Exit codes: 0 success, 1 compute or output failure, 2 configuration error.
#[derive(Parser)]
#[command(name = "fbkubo", version)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Disorder-averaged density of states over an energy sweep.
    Dos(RunArgs),
    /// Disorder-averaged Kubo conductivity with analytic overlays.
    Sigma(RunArgs),
    /// Quantum metric and spread of the compact flat-band states.
    Metric(RunArgs),
    /// Closed-form predictions only.
    Analytic(RunArgs),
    /// Re-run the configuration embedded in a result file and compare.
    Replay { file: PathBuf },
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration.
    config: PathBuf,
    /// Overrides ensemble.master_seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides output.path.
    #[arg(long)]
    output: Option<PathBuf>,
}

fn init_threads() -> Result<(), CliError> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v.parse().map_err(|_| CliError::Config {
            path: THREADS_ENV.into(),
            message: format!("expected a thread count, got {v:?}"),
        })?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Output(e.to_string()))?;
    }
    Ok(())
}

fn init_logging(level: &str) {
    let _ = env_logger::Builder::new()
        .parse_filters(level)
        .parse_env("RUST_LOG")
        .try_init();
}

fn execute(command: Command, args: RunArgs) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&args.config).map_err(|e| CliError::Config {
        path: "<file>".into(),
        message: format!("{}: {e}", args.config.display()),
    })?;
    let mut cfg = RunConfig::parse(&text)?;
    if let Some(seed) = args.seed {
        cfg.ensemble.master_seed = seed;
    }
    if let Some(path) = args.output {
        cfg.output.path = path;
    }
    init_logging(&cfg.output.verbosity);
    commands::prepare(command, &cfg)?;
    init_threads()?;
    let out = commands::run(command, &cfg)?;
    output::write(&cfg.output.path, cfg.output.format, &out.meta, &out.rows)?;
    log::info!("wrote {} rows to {}", out.rows.len(), cfg.output.path.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Sub::Dos(a) => execute(Command::Dos, a),
        Sub::Sigma(a) => execute(Command::Sigma, a),
        Sub::Metric(a) => execute(Command::Metric, a),
        Sub::Analytic(a) => execute(Command::Analytic, a),
        Sub::Replay { file } => {
            init_logging("info");
            init_threads().and_then(|_| commands::replay(&file)).map(|n| {
                println!("{}: {n} rows reproduced", file.display());
            })
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
