use std::io::{self, Write};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gametalk_cli::commands::{
    cmd_eval, cmd_export, cmd_play, cmd_signals, cmd_train, EvalArgs, ExportArgs, PlayArgs, SignalsArgs, TrainArgs,
};
use gametalk_cli::CliError;

/// Train and evaluate talking game agents.
#[derive(Parser)]
#[command(name = "gametalk", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a template policy from a TOML configuration.
    Train(TrainArgs),
    /// Evaluate a checkpoint against an opponent.
    Eval(EvalArgs),
    /// Compute per-turn signals and bounds from an episode log.
    Signals(SignalsArgs),
    /// Export preference data from branch episodes.
    Export(ExportArgs),
    /// Play a game interactively against an opponent.
    Play(PlayArgs),
}

fn run(cli: Cli) -> Result<(), CliError> {
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match cli.command {
        Cmd::Train(a) => cmd_train(&a, &mut out),
        Cmd::Eval(a) => cmd_eval(&a, &mut out),
        Cmd::Signals(a) => cmd_signals(&a, &mut out),
        Cmd::Export(a) => cmd_export(&a, &mut out).map(|_| ()),
        Cmd::Play(a) => cmd_play(&a, &mut io::stdin().lock(), &mut out).map(|_| ()),
    }?;
    out.flush()?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
