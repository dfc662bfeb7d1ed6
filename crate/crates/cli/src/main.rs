mod common;
mod evaluate;
mod failure;
mod nmf;
mod prepare;
mod separate;
mod train;

use clap::{Parser, Subcommand};

/// Blind stain separation: data preparation, training, inference and evaluation.
#[derive(Debug, Parser)]
#[command(name = "stainsep", version)]
struct Cli {
    /// Increase log detail (-v info, -vv debug)
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Cut a dataset (or synthetic data) into patches with a train/test manifest
    Prepare(prepare::Args),
    /// Train generators (and discriminators) from a TOML configuration
    Train(train::Args),
    /// Split mixed images into per-stain images with a trained checkpoint
    Separate(separate::Args),
    /// Score predicted per-stain images against ground truth
    Evaluate(evaluate::Args),
    /// Unmix images with non-negative matrix factorization
    Nmf(nmf::Args),
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).format_target(false).parse_default_env().init();
    let result = match &cli.command {
        Command::Prepare(a) => prepare::run(a),
        Command::Train(a) => train::run(a),
        Command::Separate(a) => separate::run(a),
        Command::Evaluate(a) => evaluate::run(a),
        Command::Nmf(a) => nmf::run(a),
    };
    if let Err(f) = result {
        eprintln!("error: {f}");
        std::process::exit(f.kind.exit_code());
    }
}
