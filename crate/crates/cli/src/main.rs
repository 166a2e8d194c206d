use std::process::ExitCode;

use clap::Parser;
use respilot_cli::args::Cli;
use respilot_cli::commands::run;
use respilot_cli::CliError;

fn init_logging(level: Option<&str>) {
    let env = env_logger::Env::new().filter_or("RESPILOT_LOG", "warn");
    let mut builder = env_logger::Builder::from_env(env);
    if let Some(level) = level {
        builder.parse_filters(level);
    }
    builder.init();
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            let err = CliError::validation(e.kind().to_string());
            eprintln!("{}", err.to_line());
            return ExitCode::from(err.exit_code());
        }
    };
    init_logging(cli.log_level.as_deref());
    let mut stdout = std::io::stdout().lock();
    match run(cli, &mut stdout) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_line());
            ExitCode::from(e.exit_code())
        }
    }
}
