mod args;
mod commands;
mod error;
mod workspace;

use std::process::ExitCode;

use clap::Parser;

use args::{resolve_config, Cli, Command};
use error::CliError;

fn run(cli: &Cli) -> Result<(), CliError> {
    if let Some(w) = cli.common.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(w.max(1))
            .build_global()
            .map_err(|e| CliError::Input(format!("--workers: {e}")))?;
    }
    let cfg = resolve_config(&cli.common, &cli.command)?;
    let c = &cli.common;
    match &cli.command {
        Command::Pretrain { .. } => commands::pretrain_cmd(c, &cfg),
        Command::Simmatrix { raw } => commands::simmatrix_cmd(c, &cfg, *raw),
        Command::Train { .. } => commands::train_cmd(c, &cfg),
        Command::Eval => commands::eval_cmd(c, &cfg),
        Command::Ablate { .. } => commands::ablate_cmd(c, &cfg),
        Command::Sweep { fractions, .. } => commands::sweep_cmd(c, &cfg, fractions),
        Command::Gradcheck => commands::gradcheck_cmd(c, &cfg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
