//! `specsplat` command-line driver.

pub mod args;
mod commands;
pub mod error;

use std::ffi::OsString;
use std::path::Path;

use clap::Parser;
use serde::de::DeserializeOwned;
use serde::Serialize;
use specsplat_core::Error;

use crate::args::{Cli, Command};
use crate::error::{CliError, CliResult};

const TOP_LEVEL_KEYS: [&str; 8] = ["threads", "train", "render", "eval", "ndvi", "register", "synth", "payload"];

fn read_config(path: &Path) -> CliResult<toml::Table> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| CliError::usage(format!("config {}: {}", path.display(), e.message())))?;
    if let Some(k) = table.keys().find(|k| !TOP_LEVEL_KEYS.contains(&k.as_str())) {
        return Err(CliError::usage(format!("config {}: unknown key {k}", path.display())));
    }
    Ok(table)
}

/// Overlays the flags that were given onto the config-file table.
fn merge<T: Serialize + DeserializeOwned>(flags: &T, file: Option<&toml::Value>, table: &str) -> CliResult<T> {
    let mut base = match file {
        None => toml::Table::new(),
        Some(toml::Value::Table(t)) => t.clone(),
        Some(_) => return Err(CliError::usage(format!("config: [{table}] must be a table"))),
    };
    let given = toml::Table::try_from(flags).map_err(|e| CliError::usage(format!("flags: {e}")))?;
    base.extend(given);
    toml::Value::Table(base)
        .try_into()
        .map_err(|e: toml::de::Error| CliError::usage(format!("config [{table}]: {}", e.message())))
}

fn resolve(cli: Cli) -> CliResult<(Option<usize>, Command)> {
    let file = cli.config.as_deref().map(read_config).transpose()?;
    let section = |name: &str| file.as_ref().and_then(|f| f.get(name));
    let threads = match (cli.threads, section("threads")) {
        (Some(n), _) => Some(n),
        (None, None) => None,
        (None, Some(v)) => Some(
            v.as_integer()
                .and_then(|n| usize::try_from(n).ok())
                .ok_or_else(|| CliError::usage("config: threads must be a non-negative integer"))?,
        ),
    };
    let name = cli.command.table();
    let command = match &cli.command {
        Command::Train(a) => Command::Train(merge(a, section(name), name)?),
        Command::Render(a) => Command::Render(merge(a, section(name), name)?),
        Command::Eval(a) => Command::Eval(merge(a, section(name), name)?),
        Command::Ndvi(a) => Command::Ndvi(merge(a, section(name), name)?),
        Command::Register(a) => Command::Register(merge(a, section(name), name)?),
        Command::Synth(a) => Command::Synth(merge(a, section(name), name)?),
        Command::Payload(a) => Command::Payload(merge(a, section(name), name)?),
    };
    Ok((threads, command))
}

fn dispatch(command: Command) -> CliResult<()> {
    match command {
        Command::Train(a) => commands::train(a),
        Command::Render(a) => commands::render(a),
        Command::Eval(a) => commands::eval(a),
        Command::Ndvi(a) => commands::ndvi(a),
        Command::Register(a) => commands::register(a),
        Command::Synth(a) => commands::synth(a),
        Command::Payload(a) => commands::payload(a),
    }
}

fn execute(cli: Cli) -> CliResult<()> {
    let (threads, command) = resolve(cli)?;
    match threads {
        Some(0) => Err(CliError::usage("--threads must be at least 1")),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::usage(format!("thread pool: {e}")))?
            .install(|| dispatch(command)),
        None => dispatch(command),
    }
}

/// Parses `args`, runs the command and returns the process exit code. Errors
/// are reported on stderr as a single `error=<class> message=...` line.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return 0;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().find(|l| !l.trim().is_empty()).unwrap_or("invalid arguments");
            let err = CliError::usage(first.trim_start_matches("error: "));
            eprintln!("{}", err.line());
            return err.exit_code();
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.line());
            e.exit_code()
        }
    }
}
