use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use diffcomm::harness::{self, ExperimentKind, OUT_DIR_ENV};

#[derive(Parser)]
#[command(name = "diffcomm", version, about = "Run diffusion-receiver simulation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config and write its CSV report.
    Run {
        config: PathBuf,
        /// Replace the config's seed list with this single seed.
        #[arg(long)]
        seed_override: Option<u64>,
        /// Output CSV path.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Default output directory when neither --out nor output_path is set.
        #[arg(long, env = OUT_DIR_ENV, hide_env_values = true)]
        out_dir: Option<String>,
    },
    /// Parse and validate a config, then print its canonical form.
    Validate { config: PathBuf },
    /// List the preset experiments, or print one preset's config.
    Presets { name: Option<String> },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> diffcomm::Result<()> {
    match cli.command {
        Command::Run {
            config,
            seed_override,
            out,
            out_dir,
        } => {
            let mut cfg = harness::load_config(&config)?;
            if let Some(s) = seed_override {
                cfg.seeds = vec![s];
            }
            let path = harness::resolve_output(&cfg, out.as_deref(), out_dir.as_deref());
            let rows = harness::run_to_csv(&cfg, &path)?;
            println!("{} rows -> {}", rows.len(), path.display());
        }
        Command::Validate { config } => {
            let cfg = harness::load_config(&config)?;
            print!("{}", cfg.to_toml());
        }
        Command::Presets { name: None } => {
            for k in ExperimentKind::ALL {
                println!("{:<20} {}", k.name(), k.description());
            }
        }
        Command::Presets { name: Some(n) } => {
            print!("{}", harness::preset_text(n.parse()?));
        }
    }
    Ok(())
}
