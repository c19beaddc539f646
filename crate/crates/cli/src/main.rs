//! `linerec`: one binary driving every pipeline stage.
//!
//! Exit status is 0 on success, 2 on usage errors and 1 when a stage fails;
//! failures print one `error: CODE: message` line to stderr.

mod cli;
mod error;
mod stages;

use clap::Parser;

use cli::{Cli, Command};

fn main() {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("OCR_LOG", "info"))
        .format_timestamp(None)
        .init();
    let result = match cli.command {
        Command::GenData(a) => stages::gen_data(a),
        Command::BuildDataset(a) => stages::build_dataset(a),
        Command::Train(a) => stages::train_stage(a),
        Command::Eval(a) => stages::eval_stage(a),
        Command::Infer(a) => stages::infer_stage(a),
        Command::Compare(a) => stages::compare_stage(a),
        Command::Serve(a) => stages::serve_stage(a),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(if e.code == "USAGE" { 2 } else { 1 });
    }
}
