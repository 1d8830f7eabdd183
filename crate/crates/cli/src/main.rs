use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use isac_core::experiment::{defaults_text, load_config, run, write_results, ConfigError};

#[derive(Parser)]
#[command(name = "isac", version, about = "Multi-IRS sensing/communication tradeoff experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured sweeps and write CSV results.
    Run {
        config: PathBuf,
        /// Run only this experiment (or `all`).
        #[arg(long)]
        experiment: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Override a config entry, e.g. `--set system.p_max=20dBm`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Check a configuration file without running it.
    Validate { config: PathBuf },
    /// Print the default configuration.
    Defaults,
}

/// Exit status for configuration problems, distinct from runtime failures.
const CONFIG_ERROR: u8 = 2;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            if err.downcast_ref::<ConfigError>().is_some() {
                ExitCode::from(CONFIG_ERROR)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

fn execute(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Defaults => {
            print!("{}", defaults_text());
        }
        Command::Validate { config } => {
            let cfg = load_config(&config, &[])?;
            let names: Vec<_> = cfg.experiments.iter().map(|e| e.name.as_str()).collect();
            println!("{}: ok ({})", config.display(), names.join(", "));
        }
        Command::Run { config, experiment, out, seed, mut overrides } => {
            // flags are sugar for the matching config entries
            if let Some(name) = experiment {
                overrides.push(format!("experiment.name={name}"));
            }
            if let Some(seed) = seed {
                overrides.push(format!("experiment.seed={seed}"));
            }
            if let Some(out) = out {
                overrides.push(format!("experiment.output={}", toml_string(&out.display().to_string())));
            }
            let cfg = load_config(&config, &overrides)?;
            let output = run(&cfg).context("experiment failed")?;
            write_results(&cfg.output, &cfg, &output)?;
            let infeasible = output.rows.iter().filter(|r| !r.feasible).count();
            eprintln!(
                "wrote {} rows ({} infeasible) to {}",
                output.rows.len(),
                infeasible,
                cfg.output.display()
            );
        }
    }
    Ok(())
}

/// Quotes a path so overrides never reinterpret it as another TOML type.
fn toml_string(s: &str) -> String {
    toml::Value::String(s.to_string()).to_string()
}
