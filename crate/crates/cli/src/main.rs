mod args;
mod commands;
mod config;
mod run;

use std::process::ExitCode;

use clap::Parser;
use latentflow::ErrorKind;
use serde_json::json;

use args::{Cli, Command};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

fn fail(class: &str, code: u8, message: String) -> ExitCode {
    eprintln!("{}", json!({ "error": class, "exit": code, "message": message }));
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail("usage", EXIT_USAGE, e.to_string().trim().to_string()),
    };
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    let result = match &cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::FitScaler(a) => commands::fit_scaler(a),
        Command::TrainCodec(a) => commands::train_codec(a),
        Command::Encode(a) => commands::encode(a),
        Command::Train(a) => commands::train(a),
        Command::Infer(a) => commands::infer(a),
        Command::Eval(a) => commands::eval(a),
        Command::Finetune(a) => commands::finetune(a),
        Command::Plot(a) => commands::plot(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::Usage => EXIT_USAGE,
                ErrorKind::Data => EXIT_DATA,
                ErrorKind::Numeric => EXIT_NUMERIC,
            };
            fail(e.class(), code, e.to_string())
        }
    }
}
