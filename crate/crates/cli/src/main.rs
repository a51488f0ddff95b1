use std::process::ExitCode;

use clap::Parser;

use shapsel_cli::commands::{self, Cli, Command};
use shapsel_cli::Stage;

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().parse_filters(&cli.log_level).init();

    let result = match &cli.command {
        Command::Shapley(a) => commands::shapley(a),
        Command::Semivalue(a) => commands::semivalue(a),
        Command::Adversary(a) => commands::adversary(a),
        Command::FitMtm(a) => commands::fit(a),
        Command::Consistency(a) => commands::consistency(a),
        Command::Select(a) => commands::select(a),
        Command::Experiment(a) => commands::experiment(a).map(|dir| {
            log::info!("report written to {}", dir.display());
        }),
        Command::Verify(a) => match commands::verify(a) {
            Ok(true) => Ok(()),
            Ok(false) => return ExitCode::from(Stage::Verify.exit_code() as u8),
            Err(e) => Err(e),
        },
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error {e}");
            ExitCode::from(e.stage().exit_code() as u8)
        }
    }
}
