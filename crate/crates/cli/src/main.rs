//! `levylab` — scenario runner for the numerical laboratory.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use levylab_cli::runner::{run, OutputFormat, RunOptions, RunSource};
use levylab_cli::scenarios;
use levylab_cli::CliError;

#[derive(Parser)]
#[command(
    name = "levylab",
    version,
    about = "Scenario runner for the levylab numerical laboratory"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute scenarios from a config file or a builtin scenario.
    Run(RunArgs),
    /// List the builtin scenarios.
    List,
    /// Print a builtin scenario's full config.
    Describe {
        /// Builtin scenario id (see `levylab list`).
        id: String,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Path to a TOML scenario file.
    #[arg(long, conflicts_with = "builtin", required_unless_present = "builtin")]
    config: Option<PathBuf>,
    /// Builtin scenario id (see `levylab list`).
    #[arg(long)]
    builtin: Option<String>,
    /// Output directory for reports and the manifest.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Base seed override applied to every scenario.
    #[arg(long)]
    seed: Option<u64>,
    /// Report format: `json` writes JSON reports only, `csv` adds one CSV
    /// file per plot table.
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Worker threads for the scenario pool (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run(args) => {
            let source = match (args.config, args.builtin) {
                (Some(path), None) => RunSource::ConfigPath(path),
                (None, Some(id)) => RunSource::Builtin(id),
                _ => unreachable!("clap enforces exactly one scenario source"),
            };
            let options = RunOptions {
                out_dir: args.out,
                seed_override: args.seed,
                format: match args.format {
                    Format::Json => OutputFormat::Json,
                    Format::Csv => OutputFormat::Csv,
                },
                jobs: args.jobs,
            };
            let summary = run(&source, &options)?;
            println!(
                "{} scenario(s) passed; manifest at {}",
                summary.passed,
                summary.manifest_path.display()
            );
            Ok(())
        }
        Command::List => {
            for builtin in scenarios::BUILTINS {
                println!("{:<18} {}", builtin.id, builtin.summary);
            }
            Ok(())
        }
        Command::Describe { id } => {
            let builtin = scenarios::find(&id).ok_or_else(|| {
                CliError::Config(format!("unknown builtin scenario '{id}' (try `levylab list`)"))
            })?;
            print!("{}", builtin.toml);
            Ok(())
        }
    }
}
