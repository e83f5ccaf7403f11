//! Batch command line and HTTP service over the `edgewipe` library.

pub mod args;
pub mod commands;
pub mod config;
pub mod error;
pub mod pipeline;
pub mod remote;
pub mod server;

use std::ffi::OsString;

use clap::Parser;

use args::{Cli, Command};
use config::Config;
use error::CliError;

/// Parse `argv`, run one command and return the process exit code.
///
/// Results go to stdout as JSON; failures go to stderr as
/// `{code, message, details}`.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand) {
                print!("{e}");
                return 0;
            }
            let err = CliError::usage(e.render().to_string().trim().to_string());
            eprintln!("{}", err.to_json());
            return err.exit_code;
        }
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    match execute(cli) {
        Ok(out) => {
            if !out.is_null() {
                println!("{}", serde_json::to_string_pretty(&out).expect("output serializes"));
            }
            0
        }
        Err(err) => {
            eprintln!("{}", err.to_json());
            err.exit_code
        }
    }
}

fn execute(cli: Cli) -> Result<serde_json::Value, CliError> {
    let mut cfg = Config::from_process_env(cli.config.as_deref())?;
    if let Some(ws) = cli.workspace {
        cfg.workspace = ws;
    }
    match cli.command {
        Command::Serve { bind } => {
            if let Some(b) = bind {
                cfg.bind = b;
            }
            let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
            rt.block_on(server::serve(cfg))?;
            Ok(serde_json::Value::Null)
        }
        command => commands::dispatch(command, &cfg),
    }
}
