//! `pgcn` command-line tool.
//!
//! Exit codes: 0 success, 2 invalid input or configuration, 3 numerical failure.

mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use settings::*;

#[derive(Parser)]
#[command(name = "pgcn", version, about = "Dual-head graph convolution pipeline for EEG emotion data")]
struct Cli {
    /// TOML file of flag values, or a run manifest. Flags given on the command line win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    force: bool,
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labelled feature dataset.
    Synth(SynthFlags),
    /// Generate synthetic raw multichannel recordings.
    SynthRaw(SynthRawFlags),
    /// Turn raw recordings into a labelled feature dataset.
    Featurize(FeaturizeFlags),
    /// Train one model on a whole dataset.
    Train(TrainFlags),
    /// Train and test under a cross-validation protocol.
    Eval(EvalFlags),
    /// Compare analytic gradients with finite differences on a toy model.
    Gradcheck(GradcheckFlags),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .init();

    let config = cli.config.as_deref();
    let result = match cli.command {
        Command::Synth(f) => commands::synth(f, config, cli.force),
        Command::SynthRaw(f) => commands::synth_raw(f, config, cli.force),
        Command::Featurize(f) => commands::featurize(f, config, cli.force),
        Command::Train(f) => commands::train(f, config, cli.force),
        Command::Eval(f) => commands::eval(f, config, cli.force),
        Command::Gradcheck(f) => match commands::gradcheck(f, config, cli.force) {
            Ok(true) => Ok(()),
            Ok(false) => return ExitCode::from(3),
            Err(e) => Err(e),
        },
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 3 } else { 2 })
        }
    }
}
