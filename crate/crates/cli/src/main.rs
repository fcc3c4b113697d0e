use std::path::PathBuf;
use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches, Parser};
use maxent_hjb_cli::{config, configure_threads, parse_config, run, Command};

/// Seeded maximum-entropy control experiments with CSV/JSON output.
#[derive(Parser)]
#[command(name = "maxent-hjb", version)]
struct Cli {
    command: Command,
    /// Flat `key = value` file with optional `[command]` sections.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-key overrides, `--key value` or `--key=value`.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "OVERRIDES")]
    overrides: Vec<String>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let matches = Cli::command().after_long_help(config::key_reference()).get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    let mut flags = cli.overrides;
    if let Some(seed) = cli.seed {
        flags.splice(0..0, ["--seed".to_string(), seed.to_string()]);
    }
    if let Some(out) = cli.out {
        flags.splice(0..0, ["--out".to_string(), out.display().to_string()]);
    }
    let cfg = match parse_config(cli.command, cli.config.as_deref(), &flags) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::from(2);
    }
    match run(&cfg) {
        Ok(manifest) => {
            log::info!(
                "{} finished in {:.2}s; {} files in {}",
                cfg.command,
                manifest.duration_seconds,
                manifest.files.len() + 1,
                cfg.out.display()
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
