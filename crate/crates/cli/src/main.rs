//! `hdr`: command-line driver for data generation, model training and
//! evaluation, shift estimation and the daily simulation.
//!
//! Exit codes: 0 success, 2 configuration or usage error, 3 runtime abort.

mod data;
mod experiment;
mod model;
mod util;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "hdr", version, about = "Historical data reuse for CVR prediction under promotion shift")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic clickstream dataset.
    Generate(data::GenerateArgs),
    /// Build day vectors and retrieve similar days.
    #[command(subcommand)]
    Dayvec(data::DayvecCommand),
    /// Train, evaluate or inspect a CVR model checkpoint.
    #[command(subcommand)]
    Model(model::ModelCommand),
    /// Fine-tune a TransBlock head on top of a base checkpoint.
    Finetune(model::FinetuneArgs),
    /// Label-shift estimation.
    #[command(subcommand)]
    Shiftcorr(model::ShiftcorrCommand),
    /// Metrics over prediction and label files.
    #[command(subcommand)]
    Metrics(data::MetricsCommand),
    /// Run the daily simulation for one seed.
    Run(experiment::RunArgs),
    /// Run an ablation grid over seeds and arms.
    Ablate(experiment::AblateArgs),
    /// Print the summary tables of a run directory.
    Report(experiment::ReportArgs),
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Generate(a) => data::generate(a),
        Command::Dayvec(c) => data::dayvec(c),
        Command::Model(c) => model::model(c),
        Command::Finetune(a) => model::finetune(a),
        Command::Shiftcorr(c) => model::shiftcorr(c),
        Command::Metrics(c) => data::metrics(c),
        Command::Run(a) => experiment::run(a),
        Command::Ablate(a) => experiment::ablate(a),
        Command::Report(a) => experiment::report(a),
    }
}

fn main() -> ExitCode {
    // clap exits with 2 on usage errors, which matches the config-error code.
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(util::exit_code(&e))
        }
    }
}
