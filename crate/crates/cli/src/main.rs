use std::path::PathBuf;
use std::process::ExitCode;

use agedict::synthesis::SignConvention;
use agedict_cli::{CliError, RunConfig, EXIT_INVALID, EXIT_OK};
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "agedict", version, about = "Coupled aging dictionaries: train and synthesize")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Shared {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a planted synthetic dataset and its generating model.
    GenSynthetic {
        #[command(flatten)]
        shared: Shared,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Learn a model from a dataset manifest.
    Train {
        manifest: Option<PathBuf>,
        #[command(flatten)]
        shared: Shared,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Render the older faces of one input sample.
    Synthesize {
        input: PathBuf,
        #[command(flatten)]
        shared: Shared,
        #[arg(long)]
        model: Option<PathBuf>,
        /// One-based age group of the input.
        #[arg(long)]
        group: usize,
        #[arg(long)]
        passes: Option<usize>,
        #[arg(long, value_parser = ["add", "subtract"])]
        sign: Option<String>,
    },
    /// Compare synthesized faces with references.
    Eval {
        synthesized: PathBuf,
        truth: PathBuf,
        #[command(flatten)]
        shared: Shared,
    },
}

fn load_config(shared: &Shared) -> Result<RunConfig, CliError> {
    let mut cfg = match &shared.config {
        Some(path) => RunConfig::read(path)?,
        None => RunConfig::default(),
    };
    if shared.out.is_some() {
        cfg.out = shared.out.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<agedict_cli::Outcome, CliError> {
    match cli.command {
        Command::GenSynthetic { shared, seed } => {
            let mut cfg = load_config(&shared)?;
            cfg.seed = seed.or(cfg.seed);
            cfg.validate()?;
            agedict_cli::gen_synthetic(&cfg)
        }
        Command::Train {
            manifest,
            shared,
            model,
            seed,
        } => {
            let mut cfg = load_config(&shared)?;
            cfg.manifest = manifest.or(cfg.manifest);
            cfg.model = model.or(cfg.model);
            cfg.seed = seed.or(cfg.seed);
            cfg.validate()?;
            agedict_cli::train(&cfg)
        }
        Command::Synthesize {
            input,
            shared,
            model,
            group,
            passes,
            sign,
        } => {
            let mut cfg = load_config(&shared)?;
            cfg.model = model.or(cfg.model);
            cfg.passes = passes.or(cfg.passes);
            if let Some(s) = sign {
                cfg.sign = Some(s.parse::<SignConvention>()?);
            }
            cfg.validate()?;
            agedict_cli::synthesize(&cfg, &input, group)
        }
        Command::Eval {
            synthesized,
            truth,
            shared,
        } => {
            let cfg = load_config(&shared)?;
            cfg.validate()?;
            agedict_cli::eval(&cfg, &synthesized, &truth)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_INVALID,
            };
            return ExitCode::from(code as u8);
        }
    };
    match run(cli) {
        Ok(outcome) => {
            print!("{}", outcome.report);
            ExitCode::from(outcome.exit_code as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_INVALID as u8)
        }
    }
}
