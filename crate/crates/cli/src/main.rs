use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use seqdyn_cli::commands::{self, Overrides};
use seqdyn_cli::exit_code;

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Verb {
    /// Write training and held-out samples as TSV.
    Gen,
    /// Train a model and save its checkpoint.
    Train,
    /// Decode held-out samples and save their traces.
    Eval,
    /// Write the analysis report for a checkpoint.
    Analyze,
    /// Write the CSV bundle behind one figure.
    Repro,
}

/// Seq2seq training and hidden-state analysis.
#[derive(Debug, Parser)]
#[command(version)]
struct Cli {
    verb: Verb,
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output root; overrides `run.out`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed; overrides `run.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for evaluation; overrides `run.workers`.
    #[arg(long)]
    workers: Option<usize>,
    /// Figure id for `repro`, e.g. fig2a.
    #[arg(long)]
    figure: Option<String>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let overrides = Overrides {
        out: cli.out,
        seed: cli.seed,
        workers: cli.workers,
    };
    let result = commands::load(&cli.config, &overrides).and_then(|cfg| match cli.verb {
        Verb::Gen => commands::gen(&cfg),
        Verb::Train => commands::train(&cfg),
        Verb::Eval => commands::eval(&cfg),
        Verb::Analyze => commands::analyze(&cfg),
        Verb::Repro => {
            let figure = cli.figure.as_deref().ok_or_else(|| seqdyn::Error::Config("repro needs --figure".into()))?;
            commands::repro(&cfg, figure)
        }
    });
    match result {
        Ok(path) => {
            println!("{}", path.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
