//! `fgseg`: train, predict, evaluate, gradient-check and synthesise scenes.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 numeric failure (non-finite loss, gradient check breach).

mod config;
mod error;
mod eval;
mod gradcheck;
mod predict;
mod synth;
mod train;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "fgseg", version, about = "Foreground segmentation: training, prediction and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train on a scene and write model.fgs2, train_log.jsonl and manifest.json
    Train(train::TrainArgs),
    /// Write binary masks (and probability maps) for every input frame
    Predict(predict::PredictArgs),
    /// Score masks against ground truth and print a JSON report
    Eval(eval::EvalArgs),
    /// Compare analytic gradients with finite differences
    Gradcheck(gradcheck::GradcheckArgs),
    /// Write a synthetic moving-square scene
    Synth(synth::SynthArgs),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Train(a) => train::run(a),
        Command::Predict(a) => predict::run(a),
        Command::Eval(a) => eval::run(a),
        Command::Gradcheck(a) => gradcheck::run(a),
        Command::Synth(a) => synth::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
