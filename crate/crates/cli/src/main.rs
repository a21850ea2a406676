use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use wfe_cli::config::StateSpec;
use wfe_cli::run::{build_state, inspect, read_state};
use wfe_cli::{run, threads_from_env, validate_config, CliError};

/// Wavefunction-energy experiments.
///
/// Thread count is taken from `WFE_THREADS` (default: all cores). With
/// `WFE_THREADS=1` output files are byte-reproducible.
#[derive(Parser)]
#[command(name = "wfe", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON config.
    Run {
        config: PathBuf,
        /// Override a config value, e.g. `--set toy.model.w=0.5`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Parse and range-check a config; prints the resolved config.
    Validate {
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Build or inspect state files.
    State {
        #[command(subcommand)]
        command: StateCommand,
    },
}

#[derive(Subcommand)]
enum StateCommand {
    /// Build a state from a JSON recipe (`{"kind": ...}`).
    Build {
        spec: PathBuf,
        /// Output file; standard output when absent.
        #[arg(short, long)]
        output: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print shape, norm and basic observables of a state file.
    Inspect { state: PathBuf },
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn pretty(v: &impl serde::Serialize) -> String {
    serde_json::to_string_pretty(v).expect("plain data serializes")
}

fn execute(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = threads_from_env()? {
        // only fails if a pool already exists, which cannot happen here
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match cli.command {
        Command::Run { config, overrides } => {
            let cfg = validate_config(&read(&config)?, &overrides)?;
            let manifest = run(&cfg)?;
            eprintln!(
                "{}: wrote {} to {} in {:.2} s",
                manifest.experiment,
                manifest.outputs.join(", "),
                cfg.output.display(),
                manifest.wall_time_s
            );
        }
        Command::Validate { config, overrides } => {
            let cfg = validate_config(&read(&config)?, &overrides)?;
            println!("{}", pretty(&cfg));
        }
        Command::State { command } => match command {
            StateCommand::Build { spec, output, seed } => {
                let spec: StateSpec = serde_path_to_error::deserialize(&mut serde_json::Deserializer::from_str(&read(
                    &spec,
                )?))
                .map_err(|e| {
                    let path = e.path().to_string();
                    CliError::Config(vec![format!("{path}: {}", e.into_inner())])
                })?;
                let text = build_state(&spec, seed)?.to_json() + "\n";
                match output {
                    Some(path) => fs::write(&path, text).map_err(|source| CliError::Io {
                        path: path.display().to_string(),
                        source,
                    })?,
                    None => print!("{text}"),
                }
            }
            StateCommand::Inspect { state } => println!("{}", pretty(&inspect(&read_state(&state)?))),
        },
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
