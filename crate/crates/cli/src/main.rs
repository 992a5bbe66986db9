//! `focusloom`: the local daemon plus offline tools over traces and the
//! encrypted data directory.

mod commands;
mod table;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "focusloom", version, about = "Local attention-state assistant")]
struct Cli {
    /// Data directory; defaults to $XDG_DATA_HOME/focusloom or ~/.local/share/focusloom.
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Serve the loopback API, reading activity events as JSON lines on stdin.
    Run {
        /// Overrides FOCUSLOOM_PORT and the default port.
        #[arg(long)]
        port: Option<u16>,
        /// Expose the /debug routes.
        #[arg(long)]
        dev: bool,
        /// Keep nothing on disk.
        #[arg(long)]
        ephemeral: bool,
        /// Do not read events from stdin.
        #[arg(long)]
        no_stdin: bool,
        /// Append every socket operation to this file as JSON lines.
        #[arg(long)]
        audit_log: Option<PathBuf>,
    },
    /// Feed a JSONL trace through a fresh engine and report what it emitted.
    Replay {
        trace: PathBuf,
        /// Persist into the data directory instead of memory only.
        #[arg(long)]
        store: bool,
        /// Print every emitted event as a JSON line.
        #[arg(long)]
        events: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        json: bool,
    },
    /// Generate a persona trace with ground truth and evaluate the pipeline on it.
    Simulate {
        /// Persona as JSON; omitted fields take defaults.
        #[arg(long, conflicts_with = "preset")]
        persona: Option<PathBuf>,
        /// Built-in persona: default, drift_heavy, steady, flat.
        #[arg(long)]
        preset: Option<String>,
        #[arg(long, default_value_t = 24.0)]
        hours: f64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Write the trace here as JSON lines.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Emit metrics as JSON instead of tables.
        #[arg(long)]
        json: bool,
    },
    /// Print the weekly summary from the data directory.
    Summarize {
        /// ISO week such as 2024-W05; defaults to the current week.
        #[arg(long)]
        week: Option<String>,
        #[arg(long)]
        json: bool,
    },
    /// Crypto-erase the data directory.
    Purge {
        /// Required; purge cannot be undone.
        #[arg(long)]
        yes: bool,
    },
    /// Show or change saved preferences.
    Config {
        #[command(subcommand)]
        action: ConfigAction,
    },
}

#[derive(Debug, Subcommand)]
enum ConfigAction {
    Show,
    /// Replace preferences with a JSON file; omitted fields take defaults.
    Set { file: PathBuf },
    /// Print the data directory.
    Path,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let dir = cli.data_dir.unwrap_or_else(commands::default_data_dir);
    let result = match cli.cmd {
        Cmd::Run {
            port,
            dev,
            ephemeral,
            no_stdin,
            audit_log,
        } => commands::run(commands::RunOpts {
            dir,
            port,
            dev,
            ephemeral,
            read_stdin: !no_stdin,
            audit_log,
        }),
        Cmd::Replay {
            trace,
            store,
            events,
            seed,
            json,
        } => commands::replay(&trace, store.then_some(dir.as_path()), events, seed, json),
        Cmd::Simulate {
            persona,
            preset,
            hours,
            seed,
            out,
            json,
        } => commands::simulate(persona.as_deref(), preset.as_deref(), hours, seed, out.as_deref(), json),
        Cmd::Summarize { week, json } => commands::summarize(&dir, week.as_deref(), json),
        Cmd::Purge { yes } => commands::purge(&dir, yes),
        Cmd::Config { action } => match action {
            ConfigAction::Show => commands::config_show(&dir),
            ConfigAction::Set { file } => commands::config_set(&dir, &file),
            ConfigAction::Path => {
                println!("{}", dir.display());
                Ok(())
            }
        },
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("focusloom: {e}");
            ExitCode::FAILURE
        }
    }
}
